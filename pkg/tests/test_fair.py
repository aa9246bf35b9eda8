import math

import pytest
import torch

from fairgen.errors import ConfigError, PreconditionError
from fairgen.fair import (FairTrainConfig, GenderHead, GradientReversal, GrlSpec, gender_head_forward,
                          gender_loss, grl, train_fairgendergen)
from fairgen.models import ArchConfig
from fairgen.training import TrainConfig, parameters_equal, train_facegen

from helpers import STATS, tiny_segments


def test_grl_forward_identity_and_backward_scale():
    x = torch.randn(5, 3, requires_grad=True)
    y = grl(x, 0.7)
    assert torch.equal(y, x)
    g = torch.randn(5, 3)
    y.backward(g)
    torch.testing.assert_close(x.grad, -0.7 * g)


def test_grl_module():
    x = torch.ones(2, requires_grad=True)
    GradientReversal(2.0)(x).sum().backward()
    assert x.grad.tolist() == [-2.0, -2.0]


def test_lambda_schedule():
    spec = GrlSpec(gamma=10)
    assert spec(0.0) == 0.0
    assert spec(1.0) == pytest.approx(2 / (1 + math.exp(-10)) - 1)
    values = [spec.at_epoch(e, 30) for e in range(30)]
    assert values == sorted(values) and values[-1] > 0.999
    assert GrlSpec(fixed=0.25).at_epoch(7, 30) == 0.25


def test_gender_head_rejects_silence():
    head = GenderHead(8)
    with pytest.raises(PreconditionError):
        gender_head_forward(head, torch.randn(3, 8, 3), torch.tensor([0, 2, 1]))


def test_gender_loss_skips_silent_rows():
    head = GenderHead(8).eval()
    latent = torch.randn(4, 8, 3)
    labels = torch.tensor([0, 2, 1, 2])
    loss, acc = gender_loss(head, latent, labels, 1.0)
    expected = torch.nn.functional.nll_loss(head(latent[[0, 2]]), labels[[0, 2]])
    torch.testing.assert_close(loss, expected)
    loss, acc = gender_loss(head, latent[[1, 3]], labels[[1, 3]], 1.0)
    assert float(loss) == 0.0 and math.isnan(acc)


def test_fair_config_inherits_and_validates():
    cfg = FairTrainConfig()
    assert (cfg.alpha, cfg.gamma, cfg.epochs) == (0.1, 10.0, 30)
    assert cfg.adam_betas == TrainConfig().adam_betas
    with pytest.raises(ConfigError):
        FairTrainConfig(alpha=-1)


def _warm_start(tmp_path):
    arch = ArchConfig(hidden=8, speech_width=16)
    base = train_facegen(tiny_segments(), STATS, TrainConfig(epochs=1, batch_size=4), arch,
                         checkpoint=tmp_path / "g.ckpt")
    return base


def test_adversary_changes_encoder(tmp_path):
    _warm_start(tmp_path)
    common = dict(epochs=1, batch_size=4, lambda_fixed=1.0)
    off = train_fairgendergen(tiny_segments(), None, tmp_path / "g.ckpt", FairTrainConfig(alpha=0.0, **common))
    on = train_fairgendergen(tiny_segments(), None, tmp_path / "g.ckpt", FairTrainConfig(alpha=5.0, **common))
    assert not parameters_equal(off.generator.encoder, on.generator.encoder)
    # decoder heads never see the gender loss directly, but follow the encoder
    assert "L_gender" in on.history[0] and "lambda" in on.history[0]


def test_fair_checkpoint_format(tmp_path):
    _warm_start(tmp_path)
    train_fairgendergen(tiny_segments(), None, tmp_path / "g.ckpt",
                        FairTrainConfig(epochs=1, batch_size=4), checkpoint=tmp_path / "f.ckpt",
                        loss_csv=tmp_path / "f.csv")
    payload = torch.load(tmp_path / "f.ckpt", weights_only=True)
    assert payload["format"] == "fairgen-ckpt-v1"
    assert "gender_head" in payload
    assert "L_gender" in (tmp_path / "f.csv").read_text().splitlines()[0]


def test_silence_masking_leaves_gender_loss_unchanged():
    head = GenderHead(8).eval()
    latent = torch.randn(6, 8, 3)
    labels = torch.tensor([0, 2, 1, 2, 1, 0])
    keep = labels != 2
    full, _ = gender_loss(head, latent, labels, 1.0)
    speaking_only, _ = gender_loss(head, latent[keep], labels[keep], 1.0)
    torch.testing.assert_close(full, speaking_only)


def test_lambda_logged_per_epoch(tmp_path):
    _warm_start(tmp_path)
    result = train_fairgendergen(tiny_segments(), None, tmp_path / "g.ckpt",
                                 FairTrainConfig(epochs=3, batch_size=4))
    lams = [row["lambda"] for row in result.history]
    assert lams[0] == 0.0 and lams[-1] >= 0.999
