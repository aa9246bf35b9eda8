"""Behavior/speech data model, ingestion, preprocessing and segmentation.

Behavior sequences are ``(T, 28)`` float arrays at 25 fps with columns laid
out as gaze (0-7), head rotation (8-10) and action units (11-27).  Speech
sequences are ``(T, 1024)`` float32 arrays at 50 fps.
"""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import AlignmentError, CorpusError, SchemaError, ShapeError

log = logging.getLogger(__name__)

BEHAVIOR_FPS = 25
SPEECH_FPS = 50
SPEECH_DIM = 1024
BEHAVIOR_DIM = 28

GAZE = slice(0, 8)
HEAD = slice(8, 11)
AU = slice(11, 28)
MODALITIES = {"gaze": GAZE, "head": HEAD, "AU": AU}

AU_NAMES = ["AU01", "AU02", "AU04", "AU05", "AU06", "AU07", "AU09", "AU10", "AU12",
            "AU14", "AU15", "AU17", "AU20", "AU23", "AU25", "AU26", "AU45"]
BEHAVIOR_COLUMNS = (
    [f"gaze_{e}_{a}" for e in (0, 1) for a in "xyz"]
    + ["gaze_angle_x", "gaze_angle_y", "pose_Rx", "pose_Ry", "pose_Rz"]
    + [f"{au}_r" for au in AU_NAMES]
)
assert len(BEHAVIOR_COLUMNS) == BEHAVIOR_DIM

SEGMENT_SECONDS = 4.0
OVERLAP_SECONDS = 0.4
STRIDE_SECONDS = SEGMENT_SECONDS - OVERLAP_SECONDS
SEG_BEHAVIOR_FRAMES = 100
SEG_SPEECH_FRAMES = 200
STRIDE_FRAMES = 90  # behavior frames per 3.6 s

SPLITS = ("SetGen", "SetClassif", "TestSet")


class Gender(enum.IntEnum):
    FEMALE = 0
    MALE = 1
    SILENCE = 2

    @classmethod
    def parse(cls, value) -> "Gender":
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ValueError(f"unknown gender label {value!r}") from None

    def __str__(self):
        return self.name.lower()


def au_index(name: str) -> int:
    """Column index of an action unit, e.g. ``au_index("AU12") == 19``."""
    return AU.start + AU_NAMES.index(name)


# --------------------------------------------------------------------------
# ingestion

def load_behavior_csv(path, confidence_threshold: float = 0.8):
    """Read an OpenFace-style CSV.

    Returns ``(values, valid)`` where ``values`` is ``(T, 28)`` and ``valid``
    is a boolean mask; frames under the confidence threshold (or with a zero
    ``success`` flag when that column exists) are invalid.
    """
    try:
        df = pd.read_csv(path, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise CorpusError(f"{path}: empty behavior file") from None
    df.columns = [c.strip() for c in df.columns]
    for col in ["confidence"] + BEHAVIOR_COLUMNS:
        if col not in df.columns:
            raise SchemaError(f"{path}: {col} missing")
    if len(df) == 0:
        raise CorpusError(f"{path}: empty behavior file")
    values = df[BEHAVIOR_COLUMNS].to_numpy(dtype=np.float64)
    valid = df["confidence"].to_numpy(dtype=np.float64) >= confidence_threshold
    if "success" in df.columns:
        valid &= df["success"].to_numpy() != 0
    valid &= np.isfinite(values).all(axis=1)
    return values, valid


def write_behavior_csv(path, values, confidence=None):
    values = np.asarray(values, dtype=np.float64)
    if confidence is None:
        confidence = np.ones(len(values))
    df = pd.DataFrame(values, columns=BEHAVIOR_COLUMNS)
    df.insert(0, "confidence", np.asarray(confidence, dtype=np.float64))
    df.to_csv(path, index=False, float_format="%.6f")


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def write_speech(path, frames):
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2 or frames.shape[1] != SPEECH_DIM:
        raise ShapeError(f"speech must be (T, {SPEECH_DIM}), got {frames.shape}")
    frames.tofile(path)
    meta = {"frames": int(frames.shape[0]), "dim": SPEECH_DIM, "rate": SPEECH_FPS}
    _sidecar(path).write_text(json.dumps(meta))


def load_speech(path) -> np.ndarray:
    meta_path = _sidecar(path)
    if not meta_path.exists():
        raise SchemaError(f"{path}: sidecar {meta_path.name} missing")
    meta = json.loads(meta_path.read_text())
    if meta.get("dim") != SPEECH_DIM:
        raise SchemaError(f"{path}: speech dim {meta.get('dim')} != {SPEECH_DIM}")
    if meta.get("rate", SPEECH_FPS) != SPEECH_FPS:
        raise SchemaError(f"{path}: speech rate {meta.get('rate')} != {SPEECH_FPS}")
    data = np.fromfile(path, dtype="<f4")
    if data.size != meta["frames"] * SPEECH_DIM:
        raise SchemaError(f"{path}: {data.size} floats, expected {meta['frames']}x{SPEECH_DIM}")
    data = data.reshape(meta["frames"], SPEECH_DIM)
    if not np.isfinite(data).all():
        raise CorpusError(f"{path}: non-finite speech values")
    return data


def load_intervals(path) -> list[tuple[float, float]]:
    return [(float(s), float(e)) for s, e in json.loads(Path(path).read_text())]


# --------------------------------------------------------------------------
# preprocessing

def interpolate_invalid(values, valid):
    """Linearly fill invalid frames from their nearest valid neighbours."""
    values = np.array(values, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise CorpusError("no valid frame to interpolate from")
    if valid.all():
        return values
    t = np.arange(len(values))
    good = t[valid]
    for d in range(values.shape[1]):
        # np.interp clamps outside [good[0], good[-1]], i.e. nearest-copy at the ends
        values[~valid, d] = np.interp(t[~valid], good, values[valid, d])
    return values


def running_median(x, window: int = 7):
    """Centered running median along axis 0 with truncated edge windows."""
    x = np.asarray(x, dtype=np.float64)
    half = window // 2
    pad = [(half, half)] + [(0, 0)] * (x.ndim - 1)
    padded = np.pad(x, pad, constant_values=np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(padded, window, axis=0)
    return np.nanmedian(windows, axis=-1)


def median_smooth(values, window: int = 7):
    """Median-filter head and gaze channels; AUs are left alone."""
    out = np.array(values, dtype=np.float64)
    pose = np.r_[GAZE.start:GAZE.stop, HEAD.start:HEAD.stop]
    out[:, pose] = running_median(out[:, pose], window)
    return out


def center_pose(values, speaking=None):
    """Subtract the (speaking-frame) mean from gaze and head channels."""
    out = np.array(values, dtype=np.float64)
    rows = out if speaking is None else out[np.asarray(speaking, dtype=bool)]
    if len(rows) == 0:
        return out
    pose = np.r_[GAZE.start:GAZE.stop, HEAD.start:HEAD.stop]
    out[:, pose] -= rows[:, pose].mean(axis=0)
    return out


def speaking_mask(n_frames: int, intervals, fps: float = BEHAVIOR_FPS) -> np.ndarray:
    """Boolean mask of frames whose timestamp lies in a half-open interval."""
    mask = np.zeros(n_frames, dtype=bool)
    prev_end = -np.inf
    for start, end in intervals:
        if end < start:
            raise ValueError(f"interval end {end} < start {start}")
        if start < prev_end:
            raise ValueError("intervals must be sorted and non-overlapping")
        prev_end = end
        # frame boundaries are snapped to the frame grid to dodge float drift
        mask[max(int(round(start * fps)), 0):max(int(round(end * fps)), 0)] = True
    return mask


def zero_nonspeaking(values, intervals):
    out = np.array(values, dtype=np.float64)
    out[~speaking_mask(len(out), intervals)] = 0.0
    return out


def preprocess_behavior(values, valid, intervals, window: int = 7):
    """Full cleaning chain: interpolate, smooth, center, zero listening frames."""
    speaking = speaking_mask(len(values), intervals)
    out = interpolate_invalid(values, valid)
    out = median_smooth(out, window)
    out = center_pose(out, speaking)
    out[~speaking] = 0.0
    return out


# --------------------------------------------------------------------------
# normalization

@dataclass
class NormalizationStats:
    min: np.ndarray
    max: np.ndarray
    eps: float = 1e-9

    @property
    def constant(self) -> np.ndarray:
        return (self.max - self.min) <= self.eps

    def normalize(self, x):
        x = np.asarray(x, dtype=np.float64)
        span = np.where(self.constant, 1.0, self.max - self.min)
        y = 2.0 * (x - self.min) / span - 1.0
        y = np.where(self.constant, 0.0, y)
        return np.clip(y, -1.0, 1.0)

    def denormalize(self, y):
        y = np.asarray(y, dtype=np.float64)
        span = np.where(self.constant, 0.0, self.max - self.min)
        return (y + 1.0) * 0.5 * span + self.min

    def to_dict(self):
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


def fit_normalization(train: Sequence[np.ndarray]) -> NormalizationStats:
    train = [np.asarray(s, dtype=np.float64) for s in train if len(s)]
    if not train:
        raise CorpusError("cannot fit normalization on an empty training split")
    stacked = np.concatenate(train, axis=0)
    return NormalizationStats(stacked.min(axis=0), stacked.max(axis=0))


def normalize(x, stats: NormalizationStats):
    return stats.normalize(x)


def denormalize(y, stats: NormalizationStats):
    return stats.denormalize(y)


# --------------------------------------------------------------------------
# segmentation

@dataclass
class Segment:
    speech: np.ndarray | None  # (200, 1024)
    behavior: np.ndarray  # (100, 28)
    label: Gender
    source_id: str
    start_time: float


def n_windows(n_behavior_frames: int) -> int:
    if n_behavior_frames < SEG_BEHAVIOR_FRAMES:
        return 0
    return (n_behavior_frames - SEG_BEHAVIOR_FRAMES) // STRIDE_FRAMES + 1


def check_alignment(n_speech: int, n_behavior: int):
    gap = abs(n_speech / SPEECH_FPS - n_behavior / BEHAVIOR_FPS)
    if gap > 1.0 / BEHAVIOR_FPS + 1e-9:
        raise AlignmentError(
            f"speech covers {n_speech / SPEECH_FPS:.3f}s but behavior {n_behavior / BEHAVIOR_FPS:.3f}s")


def window_labels(speaking, gender) -> list[Gender]:
    speaking = np.asarray(speaking, dtype=bool)
    gender = Gender.parse(gender)
    out = []
    for k in range(n_windows(len(speaking))):
        s = k * STRIDE_FRAMES
        out.append(gender if speaking[s:s + SEG_BEHAVIOR_FRAMES].any() else Gender.SILENCE)
    return out


def segment_corpus(speech, behavior, intervals, gender, source_id: str = "") -> list[Segment]:
    """Cut aligned 4 s windows advancing by 3.6 s; the trailing remainder is dropped."""
    behavior = np.asarray(behavior)
    n_b = len(behavior)
    if speech is not None:
        check_alignment(len(speech), n_b)
        # tolerate a frame or two of speech shortfall by edge-replicating
        need = 2 * n_b
        if len(speech) < need:
            speech = np.concatenate([speech, np.repeat(speech[-1:], need - len(speech), axis=0)])
    labels = window_labels(speaking_mask(n_b, intervals), gender)
    segments = []
    for k, label in enumerate(labels):
        b0 = k * STRIDE_FRAMES
        sp = None if speech is None else speech[2 * b0:2 * b0 + SEG_SPEECH_FRAMES]
        segments.append(Segment(sp, behavior[b0:b0 + SEG_BEHAVIOR_FRAMES], label, source_id,
                                round(k * STRIDE_SECONDS, 6)))
    return segments


def stitch_segments(windows, stride: float = STRIDE_SECONDS):
    """Overlap-average a time-ordered stack of ``(K, L, D)`` windows."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or len(windows) == 0:
        raise ValueError("need a non-empty (K, L, D) stack of windows")
    k, length, dim = windows.shape
    step = int(round(stride * BEHAVIOR_FPS))
    total = step * (k - 1) + length
    acc = np.zeros((total, dim))
    count = np.zeros((total, 1))
    for i in range(k):
        acc[i * step:i * step + length] += windows[i]
        count[i * step:i * step + length] += 1
    return acc / count


def resegment(sequence, n: int | None = None):
    """Windows of a stitched sequence laid out on the corpus grid."""
    sequence = np.asarray(sequence)
    n = n_windows(len(sequence)) if n is None else n
    return np.stack([sequence[k * STRIDE_FRAMES:k * STRIDE_FRAMES + SEG_BEHAVIOR_FRAMES]
                     for k in range(n)])


# --------------------------------------------------------------------------
# manifests

@dataclass
class ManifestEntry:
    speech: Path
    behavior: Path
    intervals: Path
    gender: Gender
    speaker_id: str
    split: str

    @property
    def video_id(self) -> str:
        return Path(self.behavior).stem


@dataclass
class CorpusManifest:
    split: str
    entries: list[ManifestEntry]
    normalization: str | None = None
    root: Path = field(default_factory=Path)

    @property
    def speakers(self) -> set[str]:
        return {e.speaker_id for e in self.entries}


def load_manifest(path) -> CorpusManifest:
    path = Path(path)
    raw = json.loads(path.read_text())
    if isinstance(raw, list):
        raw = {"entries": raw}
    entries = []
    for item in raw["entries"]:
        missing = {"speech", "behavior", "intervals", "gender", "speaker_id", "split"} - set(item)
        if missing:
            raise SchemaError(f"{path}: manifest entry missing {sorted(missing)}")
        entries.append(ManifestEntry(
            path.parent / item["speech"], path.parent / item["behavior"],
            path.parent / item["intervals"], Gender.parse(item["gender"]),
            str(item["speaker_id"]), item["split"]))
    splits = {e.split for e in entries}
    split = raw.get("split") or (splits.pop() if len(splits) == 1 else None)
    if split not in SPLITS:
        raise SchemaError(f"{path}: unknown split {split!r}")
    if any(e.split != split for e in entries):
        raise SchemaError(f"{path}: entries from several splits")
    return CorpusManifest(split, entries, raw.get("normalization"), path.parent)


def write_manifest(path, manifest: CorpusManifest):
    path = Path(path)

    def rel(p):
        return str(Path(p).relative_to(path.parent))

    doc = {"split": manifest.split, "normalization": manifest.normalization,
           "entries": [{"speech": rel(e.speech), "behavior": rel(e.behavior),
                        "intervals": rel(e.intervals), "gender": str(e.gender),
                        "speaker_id": e.speaker_id, "split": e.split}
                       for e in manifest.entries]}
    path.write_text(json.dumps(doc, indent=1))


def check_disjoint_speakers(manifests: Iterable[CorpusManifest]):
    seen: dict[str, str] = {}
    for m in manifests:
        for spk in m.speakers:
            if seen.setdefault(spk, m.split) != m.split:
                raise CorpusError(f"speaker {spk} appears in both {seen[spk]} and {m.split}")


# --------------------------------------------------------------------------
# prepared splits

@dataclass
class Video:
    video_id: str
    speaker_id: str
    gender: Gender
    behavior: np.ndarray  # preprocessed, raw units, (T, 28)
    speaking: np.ndarray  # (T,) bool
    speech: np.ndarray | None = None  # (2T, 1024)


def ingest_entry(entry: ManifestEntry, confidence_threshold=0.8, with_speech=True) -> Video:
    values, valid = load_behavior_csv(entry.behavior, confidence_threshold)
    intervals = load_intervals(entry.intervals)
    behavior = preprocess_behavior(values, valid, intervals)
    speech = None
    if with_speech:
        speech = load_speech(entry.speech)
        check_alignment(len(speech), len(behavior))
        need = 2 * len(behavior)
        if len(speech) < need:
            speech = np.concatenate([speech, np.repeat(speech[-1:], need - len(speech), axis=0)])
        speech = speech[:need]
    return Video(entry.video_id, entry.speaker_id, entry.gender, behavior,
                 speaking_mask(len(behavior), intervals), speech)


@dataclass
class SegmentSet:
    """Stacked segments of one split, behavior already normalized."""

    behavior: np.ndarray  # (N, 100, 28) float32 in [-1, 1]
    labels: np.ndarray  # (N,) int Gender values
    video_index: np.ndarray  # (N,)
    window_index: np.ndarray  # (N,)
    speech: np.ndarray | None = None  # (N, 200, 1024) float32

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx)
        return SegmentSet(self.behavior[idx], self.labels[idx], self.video_index[idx],
                          self.window_index[idx], None if self.speech is None else self.speech[idx])

    def speaking(self) -> "SegmentSet":
        return self.subset(np.flatnonzero(self.labels != Gender.SILENCE))

    def counts(self) -> dict[str, int]:
        return {str(g): int((self.labels == g).sum()) for g in Gender}


@dataclass
class PreparedSplit:
    split: str
    videos: list[Video]
    stats: NormalizationStats

    def segments(self, with_speech: bool = True) -> SegmentSet:
        beh, lab, vid, win, sp = [], [], [], [], []
        for v_i, v in enumerate(self.videos):
            labels = window_labels(v.speaking, v.gender)
            normed = self.stats.normalize(v.behavior).astype(np.float32)
            for k, label in enumerate(labels):
                b0 = k * STRIDE_FRAMES
                beh.append(normed[b0:b0 + SEG_BEHAVIOR_FRAMES])
                lab.append(int(label))
                vid.append(v_i)
                win.append(k)
                if with_speech:
                    sp.append(v.speech[2 * b0:2 * b0 + SEG_SPEECH_FRAMES])
        if not lab:
            raise CorpusError(f"{self.split}: no complete 4 s window in any video")
        speech = np.stack(sp).astype(np.float32) if with_speech else None
        return SegmentSet(np.stack(beh), np.asarray(lab), np.asarray(vid), np.asarray(win), speech)

    def save(self, path):
        offsets = np.cumsum([0] + [len(v.behavior) for v in self.videos])
        arrays = {
            "behavior": np.concatenate([v.behavior for v in self.videos]),
            "speaking": np.concatenate([v.speaking for v in self.videos]),
            "offsets": offsets,
            "genders": np.asarray([int(v.gender) for v in self.videos]),
            "video_ids": np.asarray([v.video_id for v in self.videos]),
            "speaker_ids": np.asarray([v.speaker_id for v in self.videos]),
            "norm_min": self.stats.min, "norm_max": self.stats.max,
            "split": np.asarray(self.split),
        }
        if all(v.speech is not None for v in self.videos):
            arrays["speech"] = np.concatenate([v.speech for v in self.videos]).astype(np.float32)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path, with_speech: bool = True) -> "PreparedSplit":
        with np.load(path, allow_pickle=False) as z:
            off = z["offsets"]
            speech = z["speech"] if with_speech and "speech" in z.files else None
            videos = []
            for i in range(len(off) - 1):
                a, b = off[i], off[i + 1]
                videos.append(Video(str(z["video_ids"][i]), str(z["speaker_ids"][i]),
                                    Gender(int(z["genders"][i])), z["behavior"][a:b],
                                    z["speaking"][a:b],
                                    None if speech is None else speech[2 * a:2 * b]))
            stats = NormalizationStats(z["norm_min"], z["norm_max"])
            return cls(str(z["split"]), videos, stats)


def prepare_corpus(manifests: Sequence[CorpusManifest], confidence_threshold: float = 0.8):
    """Ingest all splits, fit normalization on SetGen, return ``{split: PreparedSplit}``."""
    check_disjoint_speakers(manifests)
    by_split = {m.split: m for m in manifests}
    if "SetGen" not in by_split:
        raise CorpusError("normalization needs the SetGen split")
    videos = {}
    for split, m in by_split.items():
        if not m.entries:
            raise CorpusError(f"{split}: manifest has no entries")
        # the probe split only ever needs behavior
        with_speech = split != "SetClassif"
        videos[split] = [ingest_entry(e, confidence_threshold, with_speech) for e in m.entries]
        log.info("ingested %d videos for %s", len(videos[split]), split)
    stats = fit_normalization([v.behavior for v in videos["SetGen"]])
    return {s: PreparedSplit(s, vs, stats) for s, vs in videos.items()}
