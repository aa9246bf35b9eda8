"""Objective evaluation: DTW distances, leakage tables and report assembly."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .data import (BEHAVIOR_DIM, SEG_BEHAVIOR_FRAMES, STRIDE_FRAMES, Gender, PreparedSplit, n_windows,
                   resegment, stitch_segments)
from .errors import CorpusError, PairingError

REPORT_SCHEMA = "evalreport-v1"
SOURCES = ("Ground truth", "FaceGen", "FairGenderGen")
GT_DTW_SOURCES = ("Static", "FaceGen", "FairGenderGen")

# headline numbers of the original study, shown next to ours for orientation
REFERENCE_RESULTS = {
    "leakage": {"Ground truth": (90.18, 90.21), "FaceGen": (80.69, 80.76),
                "FairGenderGen": (48.61, 47.55)},
    "gender_gap": {"Ground truth": 31.58, "FaceGen": 32.37, "FairGenderGen": 24.70},
    "groundtruth_dtw": {"Static": 29.00, "FaceGen": 14.18, "FairGenderGen": 14.98},
}


@numba.njit(cache=True)
def _dtw(a, b):
    n, m = a.shape[0], b.shape[0]
    prev = np.full(m + 1, np.inf)
    cur = np.empty(m + 1)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[0] = np.inf
        ai = a[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = abs(ai - b[j - 1]) + best
        prev, cur = cur, prev
    return prev[m]


def dtw(a, b) -> float:
    """Classic DTW with |a_i - b_j| cost and steps (1,0), (0,1), (1,1)."""
    a = np.ascontiguousarray(a, dtype=np.float64).ravel()
    b = np.ascontiguousarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("dtw needs two non-empty series")
    return float(_dtw(a, b))


@dataclass
class DtwResult:
    per_feature: np.ndarray
    mean: float
    lengths: tuple = ()
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_features(cls, per_feature, lengths=(), **extra):
        per_feature = np.asarray(per_feature, dtype=np.float64)
        return cls(per_feature, float(per_feature.mean()), tuple(lengths), extra)

    def to_dict(self):
        return {"per_feature": self.per_feature.tolist(), "mean": self.mean,
                "lengths": list(self.lengths), **self.extra}


def subsample(x, cap: int):
    if len(x) <= cap:
        return x
    return x[np.round(np.linspace(0, len(x) - 1, cap)).astype(int)]


def gender_gap_dtw(videos, cap: int = 5000, per_frame: bool = True) -> DtwResult:
    """DTW between the male and female behavior streams, feature by feature.

    ``videos`` is an iterable of ``(behavior (T, 28), speaking (T,), gender)``.
    Speaking frames of each gender are concatenated in the given order,
    z-scored with pooled statistics and subsampled to ``cap`` frames.  With
    ``per_frame`` each distance is divided by the longer series length so
    values do not scale with ``cap``.
    """
    streams = {Gender.FEMALE: [], Gender.MALE: []}
    for behavior, speaking, gender in videos:
        behavior = np.asarray(behavior)
        speaking = np.asarray(speaking[:len(behavior)], dtype=bool)
        streams[Gender.parse(gender)].append(behavior[speaking])
    if not streams[Gender.FEMALE] or not streams[Gender.MALE]:
        raise CorpusError("gender gap needs both female and male speakers")
    f = np.concatenate(streams[Gender.FEMALE])
    m = np.concatenate(streams[Gender.MALE])
    if len(f) == 0 or len(m) == 0:
        raise CorpusError("gender gap needs speaking frames for both genders")
    pooled = np.concatenate([f, m])
    mu, sd = pooled.mean(axis=0), pooled.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    f, m = subsample((f - mu) / sd, cap), subsample((m - mu) / sd, cap)
    norm = max(len(f), len(m)) if per_frame else 1.0
    dists = [dtw(f[:, d], m[:, d]) / norm for d in range(BEHAVIOR_DIM)]
    return DtwResult.from_features(dists, (len(f), len(m)), cap=cap)


def groundtruth_dtw(generated: dict, truth: dict) -> DtwResult:
    """Mean over videos of the mean per-feature DTW to the matching ground truth."""
    if set(generated) != set(truth):
        raise PairingError(f"video sets differ: {sorted(set(generated) ^ set(truth))}")
    if not truth:
        raise PairingError("no video to compare")
    per_video = []
    for vid in sorted(truth):
        g, t = np.asarray(generated[vid]), np.asarray(truth[vid])
        per_video.append([dtw(g[:, d], t[:, d]) for d in range(BEHAVIOR_DIM)])
    per_video = np.asarray(per_video)
    return DtwResult.from_features(per_video.mean(axis=0), (len(per_video),),
                                   per_video=per_video.mean(axis=1).tolist())


def static_baseline(like) -> np.ndarray:
    """A motionless agent: centered pose and all AUs at zero."""
    return np.zeros_like(np.asarray(like, dtype=np.float64))


# --------------------------------------------------------------------------
# generation over full test videos

def generate_videos(generator, split: PreparedSplit, seed: int = 0):
    """Generate every window of every video, then overlap-average per video.

    Returns ``(stitched, windows, segments)`` where ``stitched`` maps video id
    to a normalized ``(T', 28)`` sequence and ``windows`` is the re-segmented
    ``(N, 100, 28)`` stack aligned with ``segments``.
    """
    segments = split.segments(with_speech=True)
    out = generator.generate(segments.speech, seed=seed)
    stitched, windows = {}, np.empty_like(segments.behavior)
    for v_i, video in enumerate(split.videos):
        rows = np.flatnonzero(segments.video_index == v_i)
        rows = rows[np.argsort(segments.window_index[rows])]
        if len(rows) == 0:
            continue
        seq = stitch_segments(out[rows])
        stitched[video.video_id] = seq
        windows[rows] = resegment(seq, len(rows))
    return stitched, windows, segments


def truth_videos(split: PreparedSplit):
    """Ground truth cropped to the windowed span, in raw units, keyed by video id."""
    out = {}
    for v in split.videos:
        k = n_windows(len(v.behavior))
        if k:
            out[v.video_id] = v.behavior[:STRIDE_FRAMES * (k - 1) + SEG_BEHAVIOR_FRAMES]
    return out


def export_embeddings(path, windows, labels, meta=None):
    """Write non-silent windows as an ``(N, 2800)`` little-endian float32 matrix.

    A JSON sidecar next to ``path`` carries the shape and gender labels.
    """
    windows = np.asarray(windows)
    labels = np.asarray(labels)
    keep = labels != Gender.SILENCE
    flat = np.ascontiguousarray(windows[keep].reshape(int(keep.sum()), -1), dtype="<f4")
    flat.tofile(path)
    side = {"rows": int(flat.shape[0]), "cols": int(flat.shape[1]), "dtype": "float32-le",
            "labels": [str(Gender(int(g))) for g in labels[keep]], **(meta or {})}
    Path(path).with_suffix(".json").write_text(json.dumps(side, indent=1))
    return flat.shape


# --------------------------------------------------------------------------
# report

def assemble_report(leakage: dict | None = None, gender_gap: dict | None = None,
                    gt_dtw: dict | None = None, validation: dict | None = None,
                    fingerprint: str = "", seeds: dict | None = None, inputs: dict | None = None):
    """Collect metric outputs into one JSON-ready dict; absent entries become ``None``."""
    def norm(d, keys):
        d = d or {}
        return {k: (d[k].to_dict() if hasattr(d.get(k), "to_dict") else d.get(k)) for k in keys}

    return {
        "schema": REPORT_SCHEMA,
        "fingerprint": fingerprint,
        "seeds": seeds or {},
        "inputs": inputs or {},
        "probe_validation": validation.to_dict() if hasattr(validation, "to_dict") else validation,
        "leakage": norm(leakage, SOURCES),
        "gender_gap_dtw": norm(gender_gap, SOURCES),
        "groundtruth_dtw": norm(gt_dtw, GT_DTW_SOURCES),
        "reference": {"label": "paper (private corpus)", **REFERENCE_RESULTS},
    }


def _table(title, header, rows):
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    line = "+".join("-" * (w + 2) for w in widths)
    fmt = " | ".join("{:<%d}" % w for w in widths)
    out = [title, line, fmt.format(*header), line]
    out += [fmt.format(*map(str, r)) for r in rows]
    out.append(line)
    return "\n".join(out)


def render_report(report: dict) -> str:
    def pct(entry):
        if not entry:
            return "n/a"
        return f"{100 * entry['accuracy']:.2f}% / {100 * entry['f1']:.2f}%"

    def num(entry):
        return "n/a" if not entry else f"{entry['mean']:.2f}"

    ref = report["reference"]
    tag = ref["label"]
    leak = report["leakage"]
    t1 = _table("Gender classification (Acc. / F1)", [""] + list(SOURCES), [
        ["synthetic"] + [pct(leak.get(s)) for s in SOURCES],
        [tag] + ["%.2f%% / %.2f%%" % ref["leakage"][s] for s in SOURCES],
    ])
    gap = report["gender_gap_dtw"]
    t2 = _table("DTW between males and females", [""] + list(SOURCES), [
        ["synthetic"] + [num(gap.get(s)) for s in SOURCES],
        [tag] + ["%.2f" % ref["gender_gap"][s] for s in SOURCES],
    ])
    gtd = report["groundtruth_dtw"]
    t3 = _table("DTW to ground truth", [""] + list(GT_DTW_SOURCES), [
        ["synthetic"] + [num(gtd.get(s)) for s in GT_DTW_SOURCES],
        [tag] + ["%.2f" % ref["groundtruth_dtw"][s] for s in GT_DTW_SOURCES],
    ])
    return "\n\n".join([t1, t2, t3]) + "\n"
