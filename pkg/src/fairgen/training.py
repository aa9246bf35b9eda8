"""Reconstruction and WGAN-GP losses and the FaceGen training loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn

from .data import BEHAVIOR_DIM, MODALITIES, NormalizationStats, SegmentSet
from .errors import ConfigError, NumericError, ShapeError
from .models import ArchConfig, Discriminator, Generator, make_mismatch_pairs, save_checkpoint

log = logging.getLogger(__name__)

LOSS_COLUMNS = ["epoch", "L_G", "L_gaze", "L_head", "L_AU", "L_adv", "penalty", "wall_s"]


@dataclass
class TrainConfig:
    beta: float = 1.0
    phi: float = 10.0
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    batch_size: int = 32
    epochs: int = 50
    full_epochs: int = 1200
    seed: int = 0
    adam_betas: tuple = (0.5, 0.9)
    critic_steps: int = 1
    mismatch_fraction: float = 0.25
    recon_reduction: str = "sum_sq_mean"

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 for the gradient penalty")
        if self.recon_reduction not in ("sum_sq_mean", "rmse"):
            raise ConfigError(f"unknown recon_reduction {self.recon_reduction!r}")
        if self.critic_steps < 1:
            raise ConfigError("critic_steps must be >= 1")
        if not 0 <= self.mismatch_fraction < 1:
            raise ConfigError("mismatch_fraction must be in [0, 1)")


# --------------------------------------------------------------------------
# losses

def recon_loss(real, fake, reduction: str = "sum_sq_mean"):
    """Per-modality reconstruction losses ``(L_gaze, L_head, L_AU, L_G)``.

    ``sum_sq_mean`` sums squared errors over a modality's dims and averages
    over batch and time; ``rmse`` takes the root of the per-element mean.
    """
    if real.shape != fake.shape or real.shape[-1] != BEHAVIOR_DIM:
        raise ShapeError(f"behavior shapes differ or are not (..., 28): {tuple(real.shape)} vs {tuple(fake.shape)}")
    sq = (real - fake) ** 2
    parts = []
    for sl in MODALITIES.values():
        if reduction == "rmse":
            parts.append(torch.sqrt(sq[..., sl].mean()))
        else:
            parts.append(sq[..., sl].sum(-1).mean())
    return parts[0], parts[1], parts[2], parts[0] + parts[1] + parts[2]


def interpolate(real, fake, l):
    """``l * real + (1 - l) * fake`` with ``l`` broadcast per example."""
    l = torch.as_tensor(l, dtype=real.dtype).reshape(-1, *([1] * (real.dim() - 1)))
    return l * real + (1 - l) * fake


def gradient_penalty(D: Callable, speech, real, fake, l=None, phi: float = 10.0):
    """``phi * E[(||grad_x D(speech, x)||_2 - 1)^2]`` on real/fake interpolates.

    The gradient is taken w.r.t. the interpolated behavior only, with
    ``create_graph`` so the penalty can be backpropagated into ``D``.
    """
    if l is None:
        l = torch.rand(len(real))
    x_hat = interpolate(real.detach(), fake.detach(), l).requires_grad_(True)
    score = D(speech, x_hat)
    grad, = torch.autograd.grad(score.sum(), x_hat, create_graph=True)
    norm = grad.flatten(1).norm(2, dim=1)
    return phi * ((norm - 1) ** 2).mean()


def adv_loss(D: Callable, speech, real, fake, mismatch=None, phi: float = 10.0, l=None):
    """Critic objective ``E[D(fake)] - E[D(real)] + penalty``.

    Mismatch pairs join the fake expectation.  Returns ``(L_adv, penalty)``.
    """
    fake = fake.detach()
    d_real = D(speech, real)
    if mismatch is not None and len(mismatch[0]):
        d_fake = D(torch.cat([speech, mismatch[0]]), torch.cat([fake, mismatch[1]]))
    else:
        d_fake = D(speech, fake)
    penalty = gradient_penalty(D, speech, real, fake, l, phi)
    return d_fake.mean() - d_real.mean() + penalty, penalty


def generator_adv_loss(D: Callable, speech, fake):
    return -D(speech, fake).mean()


# --------------------------------------------------------------------------
# training loop

@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    history: list[dict] = field(default_factory=list)
    extra_modules: dict = field(default_factory=dict)

    def curves(self, exclude=("wall_s",)):
        return [{k: v for k, v in row.items() if k not in exclude} for row in self.history]


def _tensors(segments: SegmentSet, idx):
    return (torch.from_numpy(segments.speech[idx]), torch.from_numpy(segments.behavior[idx]),
            torch.from_numpy(segments.labels[idx]))


def batch_order(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    order = np.random.default_rng([seed, epoch]).permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate(batches[-2:])
        batches.pop()
    return batches


def fit_adversarial(generator: Generator, discriminator: Discriminator, segments: SegmentSet,
                    stats: NormalizationStats, cfg: TrainConfig, gender_step=None,
                    extra_params=(), on_epoch=None) -> list[dict]:
    """Alternating critic / generator updates over ``segments``.

    ``gender_step(latent, labels, epoch, step)`` may return
    ``(loss, {column: value})``; its loss is added to the generator objective
    and ``extra_params`` (its own parameters) get their own Adam optimizer.
    """
    if segments.speech is None:
        raise ShapeError("training needs speech segments")
    if len(segments) < 2:
        raise ConfigError("need at least two segments to train")
    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.lr_g, betas=cfg.adam_betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg.lr_d, betas=cfg.adam_betas)
    extra_params = list(extra_params)
    opt_x = (torch.optim.Adam(extra_params, lr=cfg.lr_g, betas=cfg.adam_betas)
             if extra_params else None)
    silent_frame = torch.as_tensor(stats.normalize(np.zeros(BEHAVIOR_DIM)), dtype=torch.float32)
    generator.train()
    discriminator.train()
    torch.manual_seed(cfg.seed)
    history, last_finite, step = [], None, 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        sums: dict[str, float] = {}
        batches = batch_order(len(segments), cfg.batch_size, cfg.seed, epoch)
        for idx in batches:
            speech, real, labels = _tensors(segments, idx)
            fake, latent = generator(speech, return_latent=True)

            for _ in range(cfg.critic_steps):
                mismatch = make_mismatch_pairs(speech, real, labels, silent_frame,
                                               cfg.mismatch_fraction)
                l_adv, penalty = adv_loss(discriminator, speech, real, fake, mismatch, cfg.phi)
                opt_d.zero_grad(set_to_none=True)
                l_adv.backward()
                opt_d.step()

            l_gaze, l_head, l_au, l_g = recon_loss(real, fake, cfg.recon_reduction)
            total = l_g + cfg.beta * generator_adv_loss(discriminator, speech, fake)
            logs = {"L_G": l_g, "L_gaze": l_gaze, "L_head": l_head, "L_AU": l_au,
                    "L_adv": l_adv, "penalty": penalty}
            if gender_step is not None:
                l_gender, extra_logs = gender_step(latent, labels, epoch, step)
                total = total + l_gender
                logs.update(extra_logs)
            opt_g.zero_grad(set_to_none=True)
            if opt_x is not None:
                opt_x.zero_grad(set_to_none=True)
            total.backward()
            opt_g.step()
            if opt_x is not None:
                opt_x.step()

            values = {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in logs.items()}
            if not all(math.isfinite(v) for v in values.values()) or not math.isfinite(float(total.detach())):
                raise NumericError(step, values, last_finite)
            last_finite = values
            for k, v in values.items():
                sums[k] = sums.get(k, 0.0) + v
            step += 1
        row = {"epoch": epoch, **{k: v / len(batches) for k, v in sums.items()},
               "wall_s": time.perf_counter() - t0}
        history.append(row)
        log.info("epoch %d  L_G %.4f  L_adv %.4f", epoch, row["L_G"], row["L_adv"])
        if on_epoch is not None:
            on_epoch(row)
    return history


def build_models(arch: ArchConfig, seed: int):
    torch.manual_seed(seed)
    return Generator(arch), Discriminator(arch)


def train_facegen(segments: SegmentSet, stats: NormalizationStats, cfg: TrainConfig | None = None,
                  arch: ArchConfig | None = None, generator=None, discriminator=None,
                  checkpoint=None, loss_csv=None, extra_payload=None) -> TrainResult:
    """Train (or continue training) FaceGen on SetGen segments."""
    cfg = cfg or TrainConfig()
    if generator is None or discriminator is None:
        generator, discriminator = build_models(arch or ArchConfig(), cfg.seed)
    history = fit_adversarial(generator, discriminator, segments, stats, cfg)
    result = TrainResult(generator, discriminator, history)
    if checkpoint is not None:
        save_checkpoint(checkpoint, generator, discriminator, stats,
                        {"train": asdict(cfg), **(extra_payload or {})})
    if loss_csv is not None:
        write_loss_csv(loss_csv, history, LOSS_COLUMNS)
    return result


def write_loss_csv(path, history, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def parameters_equal(a: nn.Module, b: nn.Module) -> bool:
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(torch.equal(sa[k], sb[k]) for k in sa)
