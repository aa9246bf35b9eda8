"""FaceGen generator and discriminator, plus checkpoint I/O."""
from __future__ import annotations

import io
import json
import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .data import (BEHAVIOR_DIM, SEG_BEHAVIOR_FRAMES, SEG_SPEECH_FRAMES, SPEECH_DIM, AU, GAZE, HEAD,
                   NormalizationStats)
from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

ENCODER_LENGTHS = (200, 100, 50, 25, 12, 6, 3)
DECODER_LENGTHS = (3, 6, 12, 25, 50, 100)
NOISE_STAGE = 3  # index into ENCODER_LENGTHS: noise is added at length 25
HEAD_DIMS = {"gaze": GAZE, "head": HEAD, "AU": AU}
FACEGEN_FORMAT = "facegen-ckpt-v1"


@dataclass
class ArchConfig:
    hidden: int = 128
    kernel_size: int = 3
    dropout: float = 0.1
    noise_scale: float = 1.0
    critic_head: str = "sigmoid"
    speech_width: int = 256
    disc_hidden: int | None = None
    encoder_lengths: tuple = ENCODER_LENGTHS
    decoder_lengths: tuple = DECODER_LENGTHS

    def __post_init__(self):
        self.encoder_lengths = tuple(self.encoder_lengths)
        self.decoder_lengths = tuple(self.decoder_lengths)
        if self.critic_head not in ("sigmoid", "linear"):
            raise ConfigError(f"critic_head must be sigmoid or linear, not {self.critic_head!r}")
        if self.kernel_size % 2 != 1:
            raise ConfigError("kernel_size must be odd to preserve length")
        if self.encoder_lengths != ENCODER_LENGTHS or self.decoder_lengths != DECODER_LENGTHS:
            raise ConfigError("length schedules are fixed by the 200/100 frame alignment")
        if self.decoder_lengths != tuple(reversed(self.encoder_lengths[1:])):
            raise ConfigError("decoder schedule must mirror the encoder")

    @property
    def disc_width(self) -> int:
        return self.disc_hidden or self.hidden

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ConvBlock(nn.Sequential):
    """Conv1d -> Dropout -> BatchNorm1d -> ReLU, length preserving."""

    def __init__(self, c_in, c_out, kernel_size=3, dropout=0.1):
        super().__init__(
            nn.Conv1d(c_in, c_out, kernel_size, padding=kernel_size // 2),
            nn.Dropout(dropout),
            nn.BatchNorm1d(c_out),
            nn.ReLU(),
        )


class DoubleConv(nn.Sequential):
    def __init__(self, c_in, c_out, kernel_size=3, dropout=0.1):
        super().__init__(ConvBlock(c_in, c_out, kernel_size, dropout),
                         ConvBlock(c_out, c_out, kernel_size, dropout))


def conv_block(c_in, c_out, cfg: ArchConfig | None = None) -> ConvBlock:
    cfg = cfg or ArchConfig()
    return ConvBlock(c_in, c_out, cfg.kernel_size, cfg.dropout)


def double_conv(c_in, c_out, cfg: ArchConfig | None = None) -> DoubleConv:
    cfg = cfg or ArchConfig()
    return DoubleConv(c_in, c_out, cfg.kernel_size, cfg.dropout)


def expand_noise(a, b, length: int, scale: float = 1.0):
    """Linear ramp from ``a`` to ``b`` across ``length`` steps.

    ``a`` and ``b`` are ``(B, C)``; the result is ``(B, C, length)``.
    """
    t = torch.linspace(0.0, 1.0, length, dtype=a.dtype, device=a.device)
    return scale * ((1 - t) * a[..., None] + t * b[..., None])


def sample_noise(batch: int, channels: int, generator: torch.Generator | None = None):
    """Endpoint pairs ``(a, b)``, each standard normal of shape ``(B, C)``."""
    ab = torch.randn(2, batch, channels, generator=generator)
    return ab[0], ab[1]


class Encoder(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        h, k, p = cfg.hidden, cfg.kernel_size, cfg.dropout
        self.cfg = cfg
        self.stem = nn.Sequential(ConvBlock(SPEECH_DIM, cfg.speech_width, k, p),
                                  ConvBlock(cfg.speech_width, h, k, p))
        self.down = nn.ModuleList(DoubleConv(h, h, k, p) for _ in range(6))

    def forward(self, speech, noise=None):
        """``speech`` is ``(B, 200, 1024)``; returns ``(latent, skips)``.

        ``noise`` is an ``(a, b)`` endpoint pair or ``None`` to draw one from
        the global torch RNG.
        """
        if speech.dim() != 3 or speech.shape[1:] != (SEG_SPEECH_FRAMES, SPEECH_DIM):
            raise ShapeError(f"speech must be (B, {SEG_SPEECH_FRAMES}, {SPEECH_DIM}), got {tuple(speech.shape)}")
        x = self.stem(speech.transpose(1, 2))
        skips = []
        for i, block in enumerate(self.down):
            x = block(F.max_pool1d(x, 2))  # floor mode: 25 -> 12
            if i + 1 == NOISE_STAGE:
                if noise is None:
                    noise = sample_noise(x.shape[0], x.shape[1])
                x = x + expand_noise(noise[0], noise[1], x.shape[-1], self.cfg.noise_scale)
            skips.append(x)
        return skips[-1], skips[:-1]


class DecoderHead(nn.Module):
    def __init__(self, cfg: ArchConfig, out_dim: int):
        super().__init__()
        h, k, p = cfg.hidden, cfg.kernel_size, cfg.dropout
        self.up = nn.ModuleList(DoubleConv(2 * h, h, k, p) for _ in DECODER_LENGTHS[1:])
        self.out = nn.Conv1d(h, out_dim, k, padding=k // 2)

    def forward(self, latent, skips):
        x = latent
        for block, skip in zip(self.up, reversed(skips)):
            x = F.interpolate(x, size=skip.shape[-1], mode="linear", align_corners=False)
            x = block(torch.cat([x, skip], dim=1))
        return torch.tanh(self.out(x))


class Generator(nn.Module):
    """Noise-conditioned speech-to-behavior encoder-decoder with three heads."""

    def __init__(self, cfg: ArchConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ArchConfig()
        self.encoder = Encoder(cfg)
        self.heads = nn.ModuleDict({name: DecoderHead(cfg, sl.stop - sl.start)
                                    for name, sl in HEAD_DIMS.items()})

    def encode(self, speech, noise=None):
        return self.encoder(speech, noise)

    def decode(self, latent, skips):
        lengths = tuple(s.shape[-1] for s in skips)
        if latent.shape[-1] != ENCODER_LENGTHS[-1] or lengths != ENCODER_LENGTHS[1:-1]:
            raise ShapeError(f"latent/skip lengths {latent.shape[-1]}/{lengths} do not match the schedule")
        out = torch.cat([self.heads[name](latent, skips) for name in HEAD_DIMS], dim=1)
        return out.transpose(1, 2)

    def forward(self, speech, noise=None, return_latent=False):
        latent, skips = self.encode(speech, noise)
        out = self.decode(latent, skips)
        return (out, latent) if return_latent else out

    @torch.no_grad()
    def generate(self, speech, seed: int = 0, batch_size: int = 64):
        """Eval-mode generation with noise drawn from a seeded generator."""
        was_training = self.training
        self.eval()
        speech = torch.as_tensor(np.asarray(speech, dtype=np.float32))
        squeeze = speech.dim() == 2
        if squeeze:
            speech = speech[None]
        gen = torch.Generator().manual_seed(seed)
        outs = []
        for i in range(0, len(speech), batch_size):
            chunk = speech[i:i + batch_size]
            outs.append(self(chunk, sample_noise(len(chunk), self.cfg.hidden, gen)))
        self.train(was_training)
        out = torch.cat(outs).numpy()
        return out[0] if squeeze else out


class Discriminator(nn.Module):
    """Speech-conditioned critic scoring (speech, behavior) pairs."""

    def __init__(self, cfg: ArchConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ArchConfig()
        h, k, p = cfg.disc_width, cfg.kernel_size, cfg.dropout
        self.speech_branch = nn.ModuleList([ConvBlock(SPEECH_DIM, h, k, p), ConvBlock(h, h, k, p),
                                            ConvBlock(h, h, k, p)])
        self.behavior_branch = nn.ModuleList([ConvBlock(BEHAVIOR_DIM, h, k, p), ConvBlock(h, h, k, p)])
        self.joint = ConvBlock(2 * h, h, k, p)
        self.fc1 = nn.Linear(h * 25, 64)
        self.fc2 = nn.Linear(64, 1)

    def forward(self, speech, behavior):
        if speech.dim() != 3 or speech.shape[1:] != (SEG_SPEECH_FRAMES, SPEECH_DIM):
            raise ShapeError(f"speech must be (B, {SEG_SPEECH_FRAMES}, {SPEECH_DIM}), got {tuple(speech.shape)}")
        if behavior.dim() != 3 or behavior.shape[1:] != (SEG_BEHAVIOR_FRAMES, BEHAVIOR_DIM):
            raise ShapeError(f"behavior must be (B, {SEG_BEHAVIOR_FRAMES}, {BEHAVIOR_DIM}), got {tuple(behavior.shape)}")
        if len(speech) != len(behavior):
            raise ShapeError("speech and behavior batch sizes differ")
        s = speech.transpose(1, 2)
        for block in self.speech_branch:
            s = F.max_pool1d(block(s), 2)
        b = behavior.transpose(1, 2)
        for block in self.behavior_branch:
            b = F.max_pool1d(block(b), 2)
        x = self.joint(torch.cat([s, b], dim=1)).flatten(1)
        x = self.fc2(self.fc1(x)).squeeze(-1)
        return torch.sigmoid(x) if self.cfg.critic_head == "sigmoid" else x


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


# --------------------------------------------------------------------------
# mismatch pairs

def make_mismatch_pairs(speech, behavior, labels, silent_frame, fraction=0.25, n_real=None):
    """Discriminator negatives pairing speaking and listening phases.

    Type 1 pairs speaking speech with listening (zeroed) behavior; type 2
    pairs silent speech with speaking behavior.  The count is chosen so the
    pairs make up ``fraction`` of all fake examples seen by the critic, split
    evenly between the two types.  Without a silent segment in the batch,
    only the type-1 half is emitted.

    ``silent_frame`` is the normalized value of an all-zero behavior frame.
    Returns ``(speech, behavior)`` tensors, possibly empty.
    """
    labels = torch.as_tensor(labels)
    n_real = len(labels) if n_real is None else n_real
    n_pairs = int(round(n_real * fraction / (1 - fraction))) if fraction < 1 else n_real
    speaking = torch.nonzero(labels != 2).flatten()
    silent = torch.nonzero(labels == 2).flatten()
    n1 = n_pairs - n_pairs // 2
    n2 = n_pairs // 2
    if len(silent) == 0:
        if n2:
            warnings.warn("no silent segment in batch; emitting speaking-speech negatives only",
                          stacklevel=2)
        n2 = 0
    if len(speaking) == 0:
        n1, n2 = 0, 0
    sp, beh = [], []
    if n1:
        idx = speaking[torch.arange(n1) % len(speaking)]
        sp.append(speech[idx])
        zero = torch.as_tensor(silent_frame, dtype=behavior.dtype)
        beh.append(zero.expand(n1, SEG_BEHAVIOR_FRAMES, BEHAVIOR_DIM).clone())
    if n2:
        sp.append(speech[silent[torch.arange(n2) % len(silent)]])
        beh.append(behavior[speaking[torch.arange(n2) % len(speaking)]])
    if not sp:
        return speech[:0], behavior[:0]
    return torch.cat(sp), torch.cat(beh)


# --------------------------------------------------------------------------
# checkpoints

def _pack_state(module: nn.Module):
    return {k: v.detach().cpu().clone() for k, v in module.state_dict().items()}


def save_checkpoint(path, generator: Generator, discriminator: Discriminator,
                    stats: NormalizationStats | None, extra: dict | None = None,
                    fmt: str = FACEGEN_FORMAT):
    payload = {
        "format": fmt,
        "arch": json.dumps(generator.cfg.to_dict(), sort_keys=True),
        "norm": json.dumps(stats.to_dict()) if stats is not None else None,
        "generator": _pack_state(generator),
        "discriminator": _pack_state(discriminator),
    }
    payload.update(extra or {})
    buf = io.BytesIO()
    torch.save(payload, buf)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, expect: str | tuple = (FACEGEN_FORMAT, "fairgen-ckpt-v1")):
    """Returns ``(generator, discriminator, stats, payload)``."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    expect = (expect,) if isinstance(expect, str) else expect
    if payload.get("format") not in expect:
        raise ConfigError(f"{path}: checkpoint format {payload.get('format')!r}, expected one of {expect}")
    cfg = ArchConfig.from_dict(json.loads(payload["arch"]))
    gen, disc = Generator(cfg), Discriminator(cfg)
    gen.load_state_dict(payload["generator"])
    disc.load_state_dict(payload["discriminator"])
    stats = NormalizationStats.from_dict(json.loads(payload["norm"])) if payload["norm"] else None
    return gen, disc, stats, payload
