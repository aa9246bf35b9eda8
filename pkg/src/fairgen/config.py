"""Declarative run configuration shared by every CLI subcommand."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .fair import FairTrainConfig
from .models import ArchConfig
from .probe import ProbeConfig
from .synth import SynthConfig
from .training import TrainConfig

ENV_PREFIX = "FAIRGEN_"


@dataclass
class EvalConfig:
    dtw_cap: int = 5000
    generation_seed: int = 0


@dataclass
class PathsConfig:
    corpus: str | None = None  # directory holding setgen/setclassif/testset manifests
    confidence_threshold: float = 0.8


SECTIONS = {
    "synth": SynthConfig,
    "arch": ArchConfig,
    "train": TrainConfig,
    "fair": FairTrainConfig,
    "probe": ProbeConfig,
    "eval": EvalConfig,
    "paths": PathsConfig,
}
# fields a run-level flag sets for every section
GLOBAL_KEYS = ("seed",)


@dataclass
class RunConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fair: FairTrainConfig = field(default_factory=FairTrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        doc = json.loads(json.dumps(dataclasses.asdict(self)))
        # section seeds always follow the run seed
        for section in doc.values():
            if isinstance(section, dict):
                section.pop("seed", None)
        return doc

    def fingerprint(self) -> str:
        doc = self.to_dict()
        doc.pop("paths", None)
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def strip_comments(text: str) -> str:
    """Drop full-line ``//`` and ``#`` comments."""
    return re.sub(r"(?m)^\s*(//|#).*$", "", text)


def _build_section(name, cls, values):
    if not isinstance(values, dict):
        raise ConfigError(f"{name}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(f'{name}.{k}' for k in unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _parse_env_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(environ=None) -> dict:
    """``FAIRGEN_<SECTION>_<KEY>=value`` (or ``FAIRGEN_SEED``) as a nested dict."""
    environ = os.environ if environ is None else environ
    out: dict = {}
    for var, raw in sorted(environ.items()):
        if not var.startswith(ENV_PREFIX):
            continue
        key = var[len(ENV_PREFIX):].lower()
        if key in GLOBAL_KEYS:
            out[key] = _parse_env_value(raw)
            continue
        for section in SECTIONS:
            if key.startswith(section + "_"):
                out.setdefault(section, {})[key[len(section) + 1:]] = _parse_env_value(raw)
                break
        else:
            raise ConfigError(f"environment override {var} matches no config section")
    return out


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def from_dict(doc: dict, seed: int | None = None, scale: float | None = None,
              select: str | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    unknown = sorted(set(doc) - set(SECTIONS) - set(GLOBAL_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    doc = json.loads(json.dumps(doc))
    if seed is not None:
        doc["seed"] = seed
    if scale is not None:
        doc.setdefault("synth", {})["scale"] = scale
    if select is not None:
        doc.setdefault("probe", {})["select"] = select
    run_seed = doc.get("seed", 0)
    if not isinstance(run_seed, int):
        raise ConfigError("seed must be an integer")
    sections = {}
    for name, cls in SECTIONS.items():
        values = doc.get(name, {})
        if name == "fair" and isinstance(values, dict):
            # FairGenderGen inherits the FaceGen optimization settings
            inherited = {k: v for k, v in doc.get("train", {}).items()
                         if k not in ("epochs", "full_epochs")}
            values = {**inherited, **values}
        if "seed" in {f.name for f in dataclasses.fields(cls)}:
            if isinstance(values, dict) and "seed" in values:
                raise ConfigError(f"{name}.seed: set the run-level seed instead")
            values = {**values, "seed": run_seed}
        sections[name] = _build_section(name, cls, values)
    return RunConfig(seed=run_seed, **sections)


def load_config(path=None, environ=None, **flags) -> RunConfig:
    doc = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = json.loads(strip_comments(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    doc = _merge(doc, env_overrides(environ))
    return from_dict(doc, **flags)
