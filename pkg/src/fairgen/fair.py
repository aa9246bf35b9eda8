"""FairGenderGen: a gender head on the generator latent behind a gradient reversal layer."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .data import Gender, NormalizationStats, SegmentSet
from .errors import ConfigError, PreconditionError
from .models import ArchConfig, ConvBlock, load_checkpoint, save_checkpoint
from .training import LOSS_COLUMNS, TrainConfig, TrainResult, fit_adversarial, write_loss_csv

FAIRGEN_FORMAT = "fairgen-ckpt-v1"
FAIR_LOSS_COLUMNS = LOSS_COLUMNS[:-1] + ["L_gender", "lambda", "wall_s"]


class GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lam):
        ctx.lam = lam
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad):
        return grad.neg() * ctx.lam, None


def grl(x, lam: float):
    """Identity forward; multiplies the incoming gradient by ``-lam`` backward."""
    return GradReverse.apply(x, float(lam))


class GradientReversal(nn.Module):
    def __init__(self, lam: float = 1.0):
        super().__init__()
        self.lam = lam

    def forward(self, x):
        return grl(x, self.lam)


@dataclass
class GrlSpec:
    gamma: float = 10.0
    fixed: float | None = None  # freeze lambda at this value

    def __call__(self, p: float) -> float:
        if self.fixed is not None:
            return self.fixed
        return 2.0 / (1.0 + math.exp(-self.gamma * p)) - 1.0

    def at_epoch(self, epoch: int, epochs: int) -> float:
        return self(epoch / max(epochs - 1, 1))


class GenderHead(nn.Module):
    """Classifies the ``(B, H, 3)`` latent as female/male (log-probabilities)."""

    def __init__(self, latent_channels: int, width: int = 64, kernel_size: int = 3, dropout: float = 0.1):
        super().__init__()
        self.conv1 = ConvBlock(latent_channels, width, kernel_size, dropout)
        self.conv2 = ConvBlock(width, width, kernel_size, dropout)
        self.fc1 = nn.Linear(width * 2, width)
        self.fc2 = nn.Linear(width, 2)

    def forward(self, latent):
        x = F.max_pool1d(self.conv1(latent), 2, ceil_mode=True)  # 3 -> 2
        x = self.conv2(x).flatten(1)
        return F.log_softmax(self.fc2(F.relu(self.fc1(x))), dim=-1)


def gender_head_forward(head: GenderHead, latent, labels=None, lam: float | None = None):
    """Run ``head`` on speaking latents, optionally through a GRL of strength ``lam``."""
    if labels is not None and bool((torch.as_tensor(labels) == Gender.SILENCE).any()):
        raise PreconditionError("silence latents must not reach the gender head")
    return head(latent if lam is None else grl(latent, lam))


@dataclass
class FairTrainConfig(TrainConfig):
    alpha: float = 0.1
    epochs: int = 30
    full_epochs: int = 500
    gamma: float = 10.0
    lambda_fixed: float | None = None
    head_width: int = 64

    def __post_init__(self):
        super().__post_init__()
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")


def gender_loss(head, latent, labels, lam):
    """Mean NLL of the head over non-silent rows; zero when there are none."""
    keep = torch.nonzero(torch.as_tensor(labels) != Gender.SILENCE).flatten()
    if len(keep) == 0:
        return latent.sum() * 0.0, float("nan")
    logp = gender_head_forward(head, latent[keep], labels[keep], lam)
    target = labels[keep].long()
    acc = float((logp.argmax(-1) == target).float().mean())
    return F.nll_loss(logp, target), acc


def train_fairgendergen(segments: SegmentSet, stats: NormalizationStats | None, init,
                        cfg: FairTrainConfig | None = None, checkpoint=None, loss_csv=None,
                        extra_payload=None) -> TrainResult:
    """Warm-start from a FaceGen checkpoint (path or ``(G, D)``) and train with L_fair."""
    cfg = cfg or FairTrainConfig()
    if isinstance(init, (tuple, list)):
        generator, discriminator = init
    else:
        try:
            generator, discriminator, ckpt_stats, _ = load_checkpoint(init)
        except (RuntimeError, KeyError) as exc:
            raise ConfigError(f"cannot warm-start from {init}: {exc}") from exc
        stats = stats if stats is not None else ckpt_stats
    arch: ArchConfig = generator.cfg
    schedule = GrlSpec(cfg.gamma, cfg.lambda_fixed)

    torch.manual_seed(cfg.seed + 104729)
    head = GenderHead(arch.hidden, cfg.head_width, arch.kernel_size, arch.dropout)
    head.train()

    def gender_step(latent, labels, epoch, step):
        lam = schedule.at_epoch(epoch, cfg.epochs)
        # the head's dropout draws from its own stream so the generator's RNG
        # sequence is the same as in plain FaceGen training
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed * 1_000_003 + step)
            loss, acc = gender_loss(head, latent, labels, lam)
        logs = {"L_gender": loss.detach(), "lambda": lam}
        if not math.isnan(acc):
            logs["gender_acc"] = acc
        return cfg.alpha * loss, logs

    history = fit_adversarial(generator, discriminator, segments, stats, cfg, gender_step,
                              head.parameters())
    result = TrainResult(generator, discriminator, history, {"gender_head": head})
    if checkpoint is not None:
        save_checkpoint(checkpoint, generator, discriminator, stats,
                        {"train": asdict(cfg), "grl": asdict(schedule),
                         "gender_head": {k: v.detach().clone() for k, v in head.state_dict().items()},
                         **(extra_payload or {})},
                        fmt=FAIRGEN_FORMAT)
    if loss_csv is not None:
        write_loss_csv(loss_csv, history, FAIR_LOSS_COLUMNS)
    return result
