"""Synthetic gender-biased corpus with the shapes of the real one.

Each video is driven by a handful of smooth latent signals (sums of
low-frequency sinusoids).  Speech is a fixed random projection of those
latents, gated by a speaking-energy envelope, plus a noisy "voice" channel
whose level depends on the speaker's gender.  Behavior is a deterministic
response to the same latents; with ``bias_strength > 0``
female speakers get raised AU06/AU12 and male speakers get an extra head-nod
component.  Everything else follows the same law for both genders.
"""
from __future__ import annotations

import functools
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data
from .data import (BEHAVIOR_DIM, SEG_BEHAVIOR_FRAMES, SPEECH_DIM, STRIDE_FRAMES, CorpusManifest,
                   Gender, ManifestEntry, Segment, au_index)

# (female, male, silence) window counts of the original corpus
REFERENCE_COUNTS = {
    "SetGen": (1352, 1002, 586),
    "SetClassif": (1429, 1459, 702),
    "TestSet": (267, 344, 65),
}
REFERENCE_SPEAKERS = {"SetGen": (2, 2), "SetClassif": (2, 2), "TestSet": (1, 1)}

N_LATENT = 12
HEAD_NOD = data.HEAD.start  # pose_Rx
FEMALE_AUS = (au_index("AU06"), au_index("AU12"))


@dataclass
class SynthConfig:
    scale: float = 0.1
    n_segments_per_class: int | None = None
    bias_strength: float = 1.0
    speech_dim: int = SPEECH_DIM
    seed: int = 0
    noise_level: float = 0.05
    voice_level: float = 1.5  # +level for female, -level for male speakers
    voice_noise: float = 0.3
    female_offset: float = 2.5
    male_nod: float = 0.12
    cutoff_hz: float = 2.0
    windows_per_video: int = 12
    low_confidence_rate: float = 0.01
    speakers: dict = field(default_factory=lambda: dict(REFERENCE_SPEAKERS))

    def __post_init__(self):
        if self.bias_strength < 0:
            raise ValueError("bias_strength must be >= 0")
        if self.speech_dim != SPEECH_DIM:
            raise ValueError(f"speech_dim is fixed at {SPEECH_DIM}")

    def split_counts(self, split: str) -> tuple[int, int, int]:
        if self.n_segments_per_class is not None:
            n = self.n_segments_per_class
            return n, n, max(1, round(0.25 * n))
        return tuple(max(1, round(c * self.scale)) for c in REFERENCE_COUNTS[split])


@dataclass(frozen=True)
class _World:
    """Corpus-wide constants: projection matrix and response weights."""

    projection: np.ndarray  # (N_LATENT + 2, 1024)
    au_base: np.ndarray  # (17,)
    au_gain: np.ndarray  # (17,)
    au_mix: np.ndarray  # (17, 6)


@functools.lru_cache(maxsize=8)
def _world(seed: int) -> _World:
    rng = np.random.default_rng([seed, 7919])
    proj = rng.standard_normal((N_LATENT + 2, SPEECH_DIM)) / np.sqrt(N_LATENT + 2)
    mix = rng.standard_normal((17, 6))
    mix /= np.linalg.norm(mix, axis=1, keepdims=True)
    return _World(proj, rng.uniform(0.3, 1.2, 17), rng.uniform(0.3, 0.8, 17), mix)


def _smooth_signals(rng, n: int, channels: int, fps: float, lo: float, hi: float, waves: int = 3):
    """Unit-variance mixtures of ``waves`` sinusoids with frequencies in [lo, hi] Hz."""
    t = np.arange(n) / fps
    freq = rng.uniform(lo, hi, (channels, waves))
    phase = rng.uniform(0, 2 * np.pi, (channels, waves))
    amp = rng.uniform(0.5, 1.0, (channels, waves))
    sig = np.einsum("cw,cwt->tc", amp, np.sin(2 * np.pi * freq[..., None] * t + phase[..., None]))
    return sig / np.sqrt(0.5 * (amp ** 2).sum(axis=1))


def render(cfg: SynthConfig, n_frames: int, speaking, gender, rng):
    """Render ``n_frames`` behavior frames and ``2 * n_frames`` speech frames.

    Returns ``(speech, behavior)``; behavior is in raw units and already zero
    on non-speaking frames.
    """
    world = _world(cfg.seed)
    gender = Gender.parse(gender)
    speaking = np.asarray(speaking, dtype=bool)
    n_s = 2 * n_frames
    lat = _smooth_signals(rng, n_s, N_LATENT, 50.0, 0.1, cfg.cutoff_hz)
    env = _smooth_signals(rng, n_s, 1, 50.0, 0.05, 0.5)[:, 0]
    energy = 0.5 + 0.5 / (1 + np.exp(-2 * env))
    level = {Gender.FEMALE: cfg.voice_level, Gender.MALE: -cfg.voice_level}.get(gender, 0.0)
    voice = level + cfg.voice_noise * rng.standard_normal(n_s)

    gate = np.repeat(speaking, 2).astype(np.float64)
    e = energy * gate
    z = np.column_stack([lat, np.ones(n_s), voice])
    speech = e[:, None] * (z @ world.projection)
    speech += cfg.noise_level * rng.standard_normal((n_s, SPEECH_DIM))

    c = lat[::2]
    e = e[::2]
    beh = np.zeros((n_frames, BEHAVIOR_DIM))
    ax, ay = 0.25 * e * c[:, 0], 0.15 * e * c[:, 1]
    for eye, off in ((0, 0.03), (1, -0.03)):
        beh[:, 3 * eye + 0] = np.sin(ax) + off
        beh[:, 3 * eye + 1] = np.sin(ay)
        beh[:, 3 * eye + 2] = -np.cos(ax) * np.cos(ay)
    beh[:, 6], beh[:, 7] = ax, ay
    beh[:, 8] = 0.15 * e * c[:, 2]
    beh[:, 9] = 0.20 * e * c[:, 3]
    beh[:, 10] = 0.08 * e * c[:, 4]
    aus = e[:, None] * (world.au_base + world.au_gain * (c[:, 6:12] @ world.au_mix.T))
    beh[:, 11:] = aus

    delta = cfg.bias_strength
    if gender == Gender.FEMALE:
        for d in FEMALE_AUS:
            beh[:, d] += delta * cfg.female_offset * e
    elif gender == Gender.MALE:
        beh[:, HEAD_NOD] += delta * cfg.male_nod * e * c[:, 5]

    scale = np.r_[np.full(8, 0.01), np.full(3, 0.005), np.full(17, 0.05)]
    beh += cfg.noise_level * scale * rng.standard_normal(beh.shape)
    beh[:, 11:] = np.clip(beh[:, 11:], 0.0, 5.0)
    beh[~speaking] = 0.0
    return speech.astype(np.float32), beh


def generate_segment(cfg: SynthConfig, label, rng) -> Segment:
    label = Gender.parse(label)
    speaking = np.full(SEG_BEHAVIOR_FRAMES, label != Gender.SILENCE)
    speech, beh = render(cfg, SEG_BEHAVIOR_FRAMES, speaking, label, rng)
    return Segment(speech, beh, label, "synthetic", 0.0)


def generate_segments(cfg: SynthConfig, labels, seed: int = 0, with_speech: bool = False):
    """Batch of independent segments as ``(speech | None, behavior, labels)`` arrays."""
    labels = [Gender.parse(g) for g in labels]
    speech, beh = [], []
    for i, g in enumerate(labels):
        seg = generate_segment(cfg, g, np.random.default_rng([cfg.seed, seed, i]))
        beh.append(seg.behavior)
        if with_speech:
            speech.append(seg.speech)
    return (np.stack(speech) if with_speech else None, np.stack(beh),
            np.asarray([int(g) for g in labels]))


def _runs(mask) -> list[tuple[int, int]]:
    mask = np.r_[False, np.asarray(mask, dtype=bool), False]
    edges = np.flatnonzero(np.diff(mask.astype(np.int8)))
    return list(zip(edges[::2], edges[1::2]))


def _video_plan(cfg: SynthConfig, split: str, rng):
    """List of (speaker_id, gender, per-window silence flags) for one split."""
    n_f, n_m, n_s = cfg.split_counts(split)
    spk_f, spk_m = cfg.speakers[split]
    tag = {"SetGen": "gen", "SetClassif": "cls", "TestSet": "test"}[split]
    speakers = ([(f"{tag}-f{i}", Gender.FEMALE) for i in range(spk_f)]
                + [(f"{tag}-m{i}", Gender.MALE) for i in range(spk_m)])
    speaking = {}
    for total, group in ((n_f, [s for s in speakers if s[1] == Gender.FEMALE]),
                         (n_m, [s for s in speakers if s[1] == Gender.MALE])):
        for j, (spk, _) in enumerate(group):
            speaking[spk] = total // len(group) + (j < total % len(group))
    silent = {spk: n_s // len(speakers) + (j < n_s % len(speakers))
              for j, (spk, _) in enumerate(speakers)}
    plan = []
    for spk, g in speakers:
        flags = np.zeros(speaking[spk] + silent[spk], dtype=bool)
        flags[rng.choice(len(flags), silent[spk], replace=False)] = True
        for v, start in enumerate(range(0, len(flags), cfg.windows_per_video)):
            plan.append((spk, g, f"{spk}-v{v}", flags[start:start + cfg.windows_per_video]))
    return plan


def render_video(cfg: SynthConfig, gender, silent_windows, rng):
    """Continuous video whose window grid reproduces ``silent_windows`` exactly.

    Returns ``(speech, behavior, confidence, intervals)`` with behavior in
    raw (uncentered, unfiltered) units.
    """
    w = len(silent_windows)
    n = STRIDE_FRAMES * (w - 1) + SEG_BEHAVIOR_FRAMES
    speaking = np.ones(n, dtype=bool)
    for k in np.flatnonzero(silent_windows):
        speaking[k * STRIDE_FRAMES:k * STRIDE_FRAMES + SEG_BEHAVIOR_FRAMES] = False
    speech, beh = render(cfg, n, speaking, gender, rng)
    # listening frames get idle, non-zero motion; ingestion zeroes them again
    idle = rng.normal(0, 0.01, (n, BEHAVIOR_DIM))
    idle[:, 11:] = np.abs(idle[:, 11:]) * 10
    beh[~speaking] = idle[~speaking]
    # per-speaker resting pose that centering has to remove
    beh[:, :11] += rng.normal(0, 0.05, 11)
    confidence = rng.uniform(0.85, 0.99, n)
    bad = rng.random(n) < cfg.low_confidence_rate
    confidence[bad] = rng.uniform(0.0, 0.5, bad.sum())
    beh[bad] += rng.normal(0, 1.0, (bad.sum(), BEHAVIOR_DIM))
    intervals = [(a / data.BEHAVIOR_FPS, b / data.BEHAVIOR_FPS) for a, b in _runs(speaking)]
    return speech, beh, confidence, intervals


def generate_corpus(cfg: SynthConfig, out_dir) -> dict[str, Path]:
    """Write every split to ``out_dir`` and return ``{split: manifest path}``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for s_i, split in enumerate(data.SPLITS):
        split_dir = out / split
        split_dir.mkdir(exist_ok=True)
        plan = _video_plan(cfg, split, np.random.default_rng([cfg.seed, s_i]))
        entries = []
        for v_i, (spk, gender, vid, flags) in enumerate(plan):
            rng = np.random.default_rng([cfg.seed, s_i, v_i, 1])
            speech, beh, conf, intervals = render_video(cfg, gender, flags, rng)
            stem = split_dir / vid
            data.write_speech(stem.with_suffix(".bin"), speech)
            data.write_behavior_csv(stem.with_suffix(".csv"), beh, conf)
            iv_path = split_dir / f"{vid}_intervals.json"
            iv_path.write_text(json.dumps([[round(a, 6), round(b, 6)] for a, b in intervals]))
            entries.append(ManifestEntry(stem.with_suffix(".bin"), stem.with_suffix(".csv"),
                                         iv_path, gender, spk, split))
        paths[split] = out / f"{split.lower()}.json"
        data.write_manifest(paths[split], CorpusManifest(split, entries, root=out))
    (out / "synth_config.json").write_text(json.dumps(asdict(cfg), indent=1, sort_keys=True))
    return paths


def corpus_digest(out_dir) -> str:
    """SHA-256 over every file of a generated corpus, in sorted path order."""
    h = hashlib.sha256()
    root = Path(out_dir)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
