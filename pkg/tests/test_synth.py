import json

import numpy as np
import pytest

from fairgen import data, synth
from fairgen.data import Gender


def test_split_counts_scale():
    cfg = synth.SynthConfig(scale=0.1)
    assert cfg.split_counts("SetGen") == (135, 100, 59)
    assert cfg.split_counts("SetClassif") == (143, 146, 70)
    assert cfg.split_counts("TestSet") == (27, 34, 6)
    assert synth.SynthConfig(n_segments_per_class=40).split_counts("TestSet") == (40, 40, 10)


def test_rejects_other_speech_dim():
    with pytest.raises(ValueError):
        synth.SynthConfig(speech_dim=512)


def test_generate_segments_shapes_and_silence():
    cfg = synth.SynthConfig()
    speech, beh, labels = synth.generate_segments(cfg, ["female", "male", "silence"], with_speech=True)
    assert speech.shape == (3, 200, 1024) and speech.dtype == np.float32
    assert beh.shape == (3, 100, 28)
    assert labels.tolist() == [0, 1, 2]
    assert np.all(beh[2] == 0)
    assert np.abs(speech[2]).mean() < 0.2 * np.abs(speech[0]).mean()
    assert np.all(beh[:2, :, data.AU] >= 0) and np.all(beh[:2, :, data.AU] <= 5)


def test_generate_segments_reproducible():
    cfg = synth.SynthConfig(seed=5)
    a = synth.generate_segments(cfg, ["female"] * 4, seed=1, with_speech=True)
    b = synth.generate_segments(cfg, ["female"] * 4, seed=1, with_speech=True)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def _gender_means(bias):
    cfg = synth.SynthConfig(bias_strength=bias)
    _, beh, labels = synth.generate_segments(cfg, ["female"] * 200 + ["male"] * 200, seed=11)
    f = beh[labels == Gender.FEMALE].reshape(-1, 28).mean(axis=0)
    m = beh[labels == Gender.MALE].reshape(-1, 28).mean(axis=0)
    return f - m


def test_bias_raises_female_smile_aus():
    diff = _gender_means(1.0)
    for au in synth.FEMALE_AUS:
        assert diff[au] > 0.3
    others = np.delete(np.arange(data.AU.start, 28), np.subtract(synth.FEMALE_AUS, data.AU.start))
    assert np.abs(diff[others]).max() < 0.1


def test_no_bias_no_gap():
    diff = _gender_means(0.0)
    assert np.abs(diff).max() < 0.1


def test_corpus_segment_counts_exact(small_corpus, small_prepared):
    cfg, _, _ = small_corpus
    for split in data.SPLITS:
        counts = small_prepared[split].segments(with_speech=False).counts()
        f, m, s = cfg.split_counts(split)
        assert counts == {"female": f, "male": m, "silence": s}, split


def test_corpus_speakers_disjoint(small_corpus):
    _, _, paths = small_corpus
    manifests = [data.load_manifest(paths[s]) for s in data.SPLITS]
    data.check_disjoint_speakers(manifests)
    assert {len(m.speakers) for m in manifests[:2]} == {4}
    assert len(manifests[2].speakers) == 2


def test_corpus_files_parse(small_corpus):
    _, out, paths = small_corpus
    entry = data.load_manifest(paths["TestSet"]).entries[0]
    values, valid = data.load_behavior_csv(entry.behavior)
    speech = data.load_speech(entry.speech)
    assert values.shape[1] == 28 and speech.shape == (2 * len(values), 1024)
    assert 0.9 < valid.mean() <= 1
    assert json.loads((out / "synth_config.json").read_text())["seed"] == 3


def test_prepared_behavior_normalized(small_prepared):
    seg = small_prepared["SetGen"].segments()
    assert seg.behavior.min() >= -1 and seg.behavior.max() <= 1
    assert seg.speech.shape[1:] == (200, 1024)
    # silence windows sit at the normalized value of an all-zero frame
    silent_frame = small_prepared["SetGen"].stats.normalize(np.zeros(28))
    silent = seg.behavior[seg.labels == Gender.SILENCE]
    np.testing.assert_allclose(silent, np.broadcast_to(silent_frame, silent.shape), atol=1e-6)


def test_corpus_digest_deterministic(tmp_path):
    cfg = synth.SynthConfig(scale=0.005, seed=9)
    synth.generate_corpus(cfg, tmp_path / "a")
    synth.generate_corpus(cfg, tmp_path / "b")
    assert synth.corpus_digest(tmp_path / "a") == synth.corpus_digest(tmp_path / "b")
    synth.generate_corpus(synth.SynthConfig(scale=0.005, seed=10), tmp_path / "c")
    assert synth.corpus_digest(tmp_path / "a") != synth.corpus_digest(tmp_path / "c")


def test_female_au12_exceeds_male_by_half_delta():
    for delta in (0.5, 1.0):
        cfg = synth.SynthConfig(bias_strength=delta)
        _, beh, labels = synth.generate_segments(cfg, ["female"] * 1000 + ["male"] * 1000, seed=21)
        au12 = data.au_index("AU12")
        gap = beh[labels == 0, :, au12].mean() - beh[labels == 1, :, au12].mean()
        assert gap >= 0.5 * delta


def test_male_bias_is_head_nod_amplitude():
    cfg = synth.SynthConfig()
    _, beh, labels = synth.generate_segments(cfg, ["female"] * 300 + ["male"] * 300, seed=8)
    nod = beh[..., synth.HEAD_NOD]
    assert nod[labels == 1].std() > 1.1 * nod[labels == 0].std()


def test_voice_level_matches_gender():
    cfg = synth.SynthConfig(noise_level=0.0, voice_noise=0.0)
    speech, _, labels = synth.generate_segments(cfg, ["female"] * 3 + ["male"] * 3 + ["silence"], seed=5,
                                                with_speech=True)
    proj = synth._world(cfg.seed).projection
    expected = {0: cfg.voice_level, 1: -cfg.voice_level}
    for x, g in zip(speech, labels):
        coef = np.linalg.lstsq(proj.T, x.T, rcond=None)[0]  # (N_LATENT + 2, 200)
        if g == Gender.SILENCE:
            assert np.abs(coef).max() < 1e-6
            continue
        # dividing by the constant channel removes the energy envelope
        np.testing.assert_allclose(coef[-1] / coef[-2], expected[g], rtol=1e-6)
