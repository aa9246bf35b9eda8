import json
import logging

import pytest

from fairgen import cli, synth
from fairgen.config import RunConfig, env_overrides, from_dict, load_config, strip_comments
from fairgen.errors import ConfigError


def test_defaults_and_seed_propagation():
    cfg = from_dict({"seed": 4})
    assert cfg.synth.seed == cfg.train.seed == cfg.fair.seed == cfg.probe.seed == 4
    assert cfg.arch.hidden == 128


def test_unknown_keys_rejected_with_path():
    with pytest.raises(ConfigError, match="train.learning_rate"):
        from_dict({"train": {"learning_rate": 1}})
    with pytest.raises(ConfigError, match="bogus"):
        from_dict({"bogus": {}})
    with pytest.raises(ConfigError, match="probe.seed"):
        from_dict({"probe": {"seed": 1}})


def test_fair_inherits_train_settings():
    cfg = from_dict({"train": {"lr_g": 5e-4, "epochs": 3}, "fair": {"alpha": 0.2}})
    assert cfg.fair.lr_g == 5e-4 and cfg.fair.alpha == 0.2
    assert cfg.fair.epochs == 30


def test_flags_override():
    cfg = from_dict({"synth": {"scale": 0.5}}, seed=9, scale=0.2, select="random")
    assert (cfg.seed, cfg.synth.scale, cfg.probe.select) == (9, 0.2, "random")


def test_fingerprint_ignores_paths():
    a = from_dict({})
    b = from_dict({"paths": {"corpus": "/elsewhere"}})
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != from_dict({"seed": 1}).fingerprint()


def test_comments_and_env(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('// a comment\n{\n  # another\n  "arch": {"hidden": 16}\n}\n')
    assert json.loads(strip_comments(path.read_text())) == {"arch": {"hidden": 16}}
    env = {"FAIRGEN_ARCH_HIDDEN": "24", "FAIRGEN_SEED": "3", "HOME": "/root"}
    assert env_overrides(env) == {"arch": {"hidden": 24}, "seed": 3}
    cfg = load_config(path, environ=env)
    assert cfg.arch.hidden == 24 and cfg.seed == 3
    with pytest.raises(ConfigError):
        env_overrides({"FAIRGEN_NOPE_X": "1"})


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json", environ={})
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json", environ={})


def test_round_trip_through_dict():
    cfg = from_dict({"seed": 2, "arch": {"hidden": 32}})
    assert from_dict(cfg.to_dict()).fingerprint() == cfg.fingerprint()
    assert isinstance(cfg, RunConfig)


# --------------------------------------------------------------------------
# command line

def test_cli_config_error_exit_code(tmp_path):
    (tmp_path / "c.json").write_text('{"train": {"typo": 1}}')
    assert cli.main(["synth", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == 2


def test_cli_evaluate_before_training(tmp_path, caplog):
    with caplog.at_level(logging.ERROR):
        code = cli.main(["evaluate", "--out", str(tmp_path / "run")])
    assert code == 3
    assert "fairgen train-facegen" in caplog.text


def test_cli_logs_resolved_config(tmp_path, caplog):
    with caplog.at_level(logging.INFO):
        cli.main(["train-probe", "--out", str(tmp_path), "--seed", "5"])
    assert "resolved config" in caplog.text and '"seed": 5' in caplog.text


def test_cli_synth_deterministic(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["synth", "--scale", "0.005", "--out", str(tmp_path / name)]) == 0
    assert synth.corpus_digest(tmp_path / "a" / "corpus") == synth.corpus_digest(tmp_path / "b" / "corpus")
    meta = json.loads((tmp_path / "a" / "synth.meta.json").read_text())
    assert meta["fingerprint"] == load_config(None, environ={}, scale=0.005).fingerprint()


def test_cli_report_refuses_mixed_fingerprints(tmp_path):
    out = tmp_path / "run"
    out.mkdir()
    (out / "evaluation.json").write_text(json.dumps({
        "fingerprint": "aaaa", "leakage": {}, "gender_gap_dtw": {}, "groundtruth_dtw": {}}))
    (out / "train-facegen.meta.json").write_text(json.dumps({"fingerprint": "bbbb"}))
    assert cli.main(["report", "--out", str(out)]) == 2
    assert cli.main(["report", "--out", str(out), "--force"]) == 0
    assert (out / "report.txt").exists()


def test_cli_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    text = capsys.readouterr().out
    for name in ("synth", "prepare", "train-facegen", "train-fairgen", "train-probe", "evaluate", "report"):
        assert name in text
