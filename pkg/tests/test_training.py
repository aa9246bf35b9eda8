import numpy as np
import pytest
import torch

from fairgen import synth
from fairgen.data import SegmentSet, fit_normalization
from fairgen.errors import ConfigError, NumericError, ShapeError
from fairgen.models import ArchConfig, Discriminator, Generator, load_checkpoint
from fairgen.training import (TrainConfig, adv_loss, batch_order, build_models, fit_adversarial,
                              gradient_penalty, interpolate, parameters_equal, recon_loss,
                              train_facegen)

from helpers import STATS, tiny_segments


def test_recon_loss_modality_ratio():
    real = torch.zeros(4, 100, 28)
    l_gaze, l_head, l_au, total = recon_loss(real, real + 1)
    assert (float(l_gaze), float(l_head), float(l_au)) == (8.0, 3.0, 17.0)
    assert float(total) == 28.0


def test_recon_loss_rmse():
    real = torch.zeros(2, 100, 28)
    parts = recon_loss(real, real + 2, "rmse")
    assert [float(p) for p in parts[:3]] == [2.0, 2.0, 2.0]


def test_recon_loss_shape_check():
    with pytest.raises(ShapeError):
        recon_loss(torch.zeros(2, 100, 28), torch.zeros(2, 100, 27))


def test_interpolate_endpoints():
    real, fake = torch.ones(3, 100, 28), torch.zeros(3, 100, 28)
    out = interpolate(real, fake, torch.tensor([0.0, 0.25, 1.0]))
    assert out[:, 0, 0].tolist() == [0.0, 0.25, 1.0]


def test_gradient_penalty_quadratic_critic():
    # D(x) = 0.5 * ||x||^2 has gradient x, so the norm is known at each interpolate
    def critic(speech, x):
        return 0.5 * (x ** 2).flatten(1).sum(1)

    real = torch.full((2, 100, 28), 1.0 / np.sqrt(2800))
    fake = torch.zeros_like(real)
    l = torch.tensor([1.0, 0.5])
    expected = 10 * ((1.0 - 1) ** 2 + (0.5 - 1) ** 2) / 2
    assert float(gradient_penalty(critic, None, real, fake, l, 10.0).detach()) == pytest.approx(expected, abs=1e-5)


@pytest.mark.parametrize("n,batch", [(10, 4), (9, 4), (8, 4), (1, 4)])
def test_batch_order_covers_everything(n, batch):
    batches = batch_order(n, batch, 0, 3)
    assert sorted(np.concatenate(batches).tolist()) == list(range(n))
    if n > 1:
        assert min(len(b) for b in batches) >= 2


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        TrainConfig(recon_reduction="l1")


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=1, batch_size=4, seed=7)
    arch = ArchConfig(hidden=8, speech_width=16)
    a = train_facegen(tiny_segments(), STATS, cfg, arch).curves()
    b = train_facegen(tiny_segments(), STATS, cfg, arch).curves()
    assert a == b
    assert {"L_G", "L_gaze", "L_head", "L_AU", "L_adv", "penalty"} <= set(a[0])


def test_nan_aborts_with_diagnostics():
    seg = tiny_segments()
    seg.behavior[0, 0, 0] = np.nan
    cfg = TrainConfig(epochs=1, batch_size=8, seed=0)
    with pytest.raises(NumericError) as info:
        train_facegen(seg, STATS, cfg, ArchConfig(hidden=8, speech_width=16))
    assert info.value.step == 0


def test_loss_csv_written(tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=4)
    train_facegen(tiny_segments(), STATS, cfg, ArchConfig(hidden=8, speech_width=16),
                  checkpoint=tmp_path / "g.ckpt", loss_csv=tmp_path / "l.csv")
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0] == "epoch,L_G,L_gaze,L_head,L_AU,L_adv,penalty,wall_s"
    assert len(lines) == 3
    assert (tmp_path / "g.ckpt").exists()


def test_zero_epochs_keeps_initialization(tmp_path):
    arch = ArchConfig(hidden=8, speech_width=16)
    torch.manual_seed(0)
    result = train_facegen(tiny_segments(), STATS, TrainConfig(epochs=0, seed=3), arch,
                           checkpoint=tmp_path / "g.ckpt")
    g, _, _, _ = load_checkpoint(tmp_path / "g.ckpt")
    fresh, _ = build_models(arch, 3)
    assert result.history == []
    assert parameters_equal(g, fresh)


def test_discriminator_permutation_equivariant():
    d = Discriminator(ArchConfig(hidden=8, speech_width=16)).eval()
    speech, behavior = torch.randn(6, 200, 1024), torch.rand(6, 100, 28)
    perm = torch.randperm(6)
    with torch.no_grad():
        torch.testing.assert_close(d(speech, behavior)[perm], d(speech[perm], behavior[perm]))


def test_swapping_real_and_fake_negates_critic_term():
    d = Discriminator(ArchConfig(hidden=8, speech_width=16)).eval()
    speech = torch.randn(4, 200, 1024)
    real, fake = torch.rand(4, 100, 28), torch.rand(4, 100, 28)
    l = torch.full((4,), 0.5)  # symmetric interpolates give the same penalty both ways
    a, pa = adv_loss(d, speech, real, fake, phi=10.0, l=l)
    b, pb = adv_loss(d, speech, fake, real, phi=10.0, l=l)
    torch.testing.assert_close(pa, pb)
    torch.testing.assert_close(a - pa, -(b - pb))


def test_pure_regression_smoothed_loss_decreases():
    # beta = 0 turns FaceGen into plain regression on a single batch
    seg = tiny_segments(16, seed=4)
    cfg = TrainConfig(epochs=120, batch_size=16, beta=0.0, seed=0)
    torch.manual_seed(0)
    g, d = Generator(ArchConfig(hidden=32)), Discriminator(ArchConfig(hidden=32))
    losses = np.array([row["L_G"] for row in fit_adversarial(g, d, seg, STATS, cfg)])
    smoothed = np.convolve(losses, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(smoothed) <= 1e-6)


def test_shuffled_pairings_raise_reconstruction_loss():
    cfg = synth.SynthConfig(seed=2)
    speech, beh, labels = synth.generate_segments(cfg, ["female", "male"] * 16, seed=0, with_speech=True)
    stats = fit_normalization([beh.reshape(-1, 28)])
    seg = SegmentSet(stats.normalize(beh).astype(np.float32), labels, np.zeros(len(labels), int),
                     np.arange(len(labels)), speech=speech)
    g = train_facegen(seg, stats, TrainConfig(epochs=15, batch_size=16), ArchConfig(hidden=16)).generator
    out = torch.as_tensor(g.generate(speech))
    real = torch.as_tensor(seg.behavior)
    aligned = float(recon_loss(real, out)[3])
    rng = np.random.default_rng(0)
    shuffled = [float(recon_loss(real[rng.permutation(len(real))], out)[3]) for _ in range(20)]
    assert aligned < np.mean(shuffled) - 2 * np.std(shuffled)
