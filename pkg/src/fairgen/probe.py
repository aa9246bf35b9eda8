"""Standalone gender classifier used to audit gender leakage in behavior."""
from __future__ import annotations

import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .data import BEHAVIOR_DIM, SEG_BEHAVIOR_FRAMES, Gender, SegmentSet
from .errors import ConfigError, CorpusError, PreconditionError, ShapeError
from .models import ConvBlock

log = logging.getLogger(__name__)

PROBE_FORMAT = "probe-ckpt-v1"


@dataclass
class ProbeConfig:
    width: int = 64
    lr: float = 1e-3
    epochs: int = 10
    repeats: int = 10
    batch_size: int = 32
    seed: int = 0
    val_fraction: float = 71 / 2888
    min_val_per_class: int = 10
    select: str = "median"
    dropout: float = 0.1

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.select not in ("median", "random"):
            raise ConfigError(f"select must be median or random, not {self.select!r}")


class GenderProbe(nn.Module):
    def __init__(self, width: int = 64, dropout: float = 0.1):
        super().__init__()
        self.width = width
        self.conv1 = ConvBlock(BEHAVIOR_DIM, width, 3, dropout)
        self.conv2 = ConvBlock(width, width, 3, dropout)
        self.fc1 = nn.Linear(width * 25, width)
        self.fc2 = nn.Linear(width, 2)

    def forward(self, behavior):
        if behavior.dim() != 3 or behavior.shape[1:] != (SEG_BEHAVIOR_FRAMES, BEHAVIOR_DIM):
            raise ShapeError(f"probe input must be (B, 100, 28), got {tuple(behavior.shape)}")
        x = F.max_pool1d(self.conv1(behavior.transpose(1, 2)), 2)
        x = F.max_pool1d(self.conv2(x), 2).flatten(1)
        return F.log_softmax(self.fc2(F.relu(self.fc1(x))), dim=-1)


def probe_forward(model: GenderProbe, behavior, labels=None):
    """Log-probabilities over (female, male); silence windows are rejected."""
    if labels is not None and (np.asarray(labels) == Gender.SILENCE).any():
        raise PreconditionError("silence segments must be excluded before probing")
    return model(torch.as_tensor(np.asarray(behavior, dtype=np.float32)))


@torch.no_grad()
def predict(model: GenderProbe, behavior, labels=None, batch_size: int = 256) -> np.ndarray:
    was = model.training
    model.eval()
    behavior = np.asarray(behavior, dtype=np.float32)
    preds = [probe_forward(model, behavior[i:i + batch_size],
                           None if labels is None else labels[i:i + batch_size]).argmax(-1).numpy()
             for i in range(0, len(behavior), batch_size)]
    model.train(was)
    return np.concatenate(preds) if preds else np.zeros(0, dtype=int)


@dataclass
class ProbeReport:
    accuracies: list[float]
    confusion: list[list[int]]  # [true][pred], female=0, male=1
    selected: int = 0
    label: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies, ddof=1)) if len(self.accuracies) > 1 else 0.0

    @property
    def accuracy(self) -> float:
        c = np.asarray(self.confusion)
        return float(np.trace(c) / c.sum()) if c.sum() else float("nan")

    @property
    def f1(self) -> float:
        return macro_f1(self.confusion)

    @property
    def misclassified(self) -> dict[str, tuple[int, int]]:
        c = np.asarray(self.confusion)
        return {"female": (int(c[0, 1]), int(c[0].sum())), "male": (int(c[1, 0]), int(c[1].sum()))}

    def to_dict(self):
        return {"label": self.label, "accuracies": self.accuracies, "mean": self.mean,
                "std": self.std, "selected": self.selected, "confusion": self.confusion,
                "accuracy": self.accuracy, "f1": self.f1,
                "misclassified": {k: list(v) for k, v in self.misclassified.items()},
                **self.extra}

    @classmethod
    def from_dict(cls, d):
        known = {"label", "accuracies", "mean", "std", "selected", "confusion", "accuracy",
                 "f1", "misclassified"}
        return cls(list(d["accuracies"]), d["confusion"], d.get("selected", 0), d.get("label", ""),
                   {k: v for k, v in d.items() if k not in known})


def confusion_matrix(y_true, y_pred) -> list[list[int]]:
    c = np.zeros((2, 2), dtype=int)
    np.add.at(c, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return c.tolist()


def macro_f1(confusion) -> float:
    c = np.asarray(confusion, dtype=float)
    scores = []
    for k in (0, 1):
        tp = c[k, k]
        denom = 2 * tp + c[k].sum() - tp + c[:, k].sum() - tp
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def split_train_val(labels, cfg: ProbeConfig):
    """Stratified split with the original 2817/71 ratio and a per-class floor."""
    rng = np.random.default_rng([cfg.seed, 31])
    train, val = [], []
    for g in (Gender.FEMALE, Gender.MALE):
        idx = rng.permutation(np.flatnonzero(labels == g))
        n_val = min(max(int(round(cfg.val_fraction * len(idx))), cfg.min_val_per_class), len(idx) // 2)
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def fit_probe(behavior, labels, cfg: ProbeConfig, seed: int) -> GenderProbe:
    torch.manual_seed(seed)
    model = GenderProbe(cfg.width, cfg.dropout)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    x = torch.as_tensor(np.asarray(behavior, dtype=np.float32))
    y = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    model.train()
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(y))
        for i in range(0, len(y), cfg.batch_size):
            idx = torch.as_tensor(order[i:i + cfg.batch_size])
            if len(idx) < 2:
                continue  # BatchNorm needs more than one example
            loss = F.nll_loss(model(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.eval()
    return model


def train_probe(segments: SegmentSet, cfg: ProbeConfig | None = None):
    """Train ``cfg.repeats`` probes on SetClassif; returns ``(report, selected_model)``."""
    cfg = cfg or ProbeConfig()
    seg = segments.speaking()
    if len(np.unique(seg.labels)) < 2:
        raise CorpusError("probe training needs both female and male segments")
    train_idx, val_idx = split_train_val(seg.labels, cfg)
    models, accs, confs = [], [], []
    for r in range(cfg.repeats):
        model = fit_probe(seg.behavior[train_idx], seg.labels[train_idx], cfg, cfg.seed * 1000 + r)
        pred = predict(model, seg.behavior[val_idx])
        conf = confusion_matrix(seg.labels[val_idx], pred)
        models.append(model)
        confs.append(conf)
        accs.append(float(np.trace(np.asarray(conf)) / len(val_idx)))
        log.info("probe run %d: val acc %.4f", r, accs[-1])
    if cfg.select == "median":
        ranks = np.argsort(accs, kind="stable")
        chosen = int(ranks[(len(accs) - 1) // 2])
    else:
        chosen = int(np.random.default_rng([cfg.seed, 17]).integers(len(accs)))
    report = ProbeReport(accs, confs[chosen], chosen, "validation",
                         {"n_train": int(len(train_idx)), "n_val": int(len(val_idx))})
    return report, models[chosen]


def audit_leakage(model: GenderProbe, behavior, labels, label: str = "") -> ProbeReport:
    """Probe accuracy / F1 / confusion on non-silent windows."""
    behavior = np.asarray(behavior)
    labels = np.asarray(labels)
    keep = labels != Gender.SILENCE
    if not keep.any():
        raise CorpusError("no speaking window to audit")
    pred = predict(model, behavior[keep], labels[keep])
    conf = confusion_matrix(labels[keep], pred)
    acc = float(np.trace(np.asarray(conf)) / keep.sum())
    return ProbeReport([acc], conf, 0, label)


def save_probe(path, model: GenderProbe, cfg: ProbeConfig, extra=None):
    buf = io.BytesIO()
    torch.save({"format": PROBE_FORMAT, "config": json.dumps(asdict(cfg)),
                "state": {k: v.clone() for k, v in model.state_dict().items()}, **(extra or {})}, buf)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_probe(path) -> GenderProbe:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != PROBE_FORMAT:
        raise ConfigError(f"{path}: not a probe checkpoint")
    cfg = ProbeConfig(**json.loads(payload["config"]))
    model = GenderProbe(cfg.width, cfg.dropout)
    try:
        model.load_state_dict(payload["state"])
    except RuntimeError as exc:
        raise ConfigError(f"{path}: probe dimension mismatch: {exc}") from exc
    model.eval()
    return model
