"""Pipeline stages over an output directory; the CLI is a thin wrapper around these."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data, metrics, synth
from .config import RunConfig
from .data import Gender, PreparedSplit
from .errors import ConfigError, MissingArtifactError
from .fair import train_fairgendergen
from .models import load_checkpoint
from .probe import ProbeReport, audit_leakage, load_probe, save_probe, train_probe
from .training import train_facegen

log = logging.getLogger(__name__)

# artifact -> subcommand that produces it
PRODUCERS = {
    "corpus": "synth",
    "prepared": "prepare",
    "facegen.ckpt": "train-facegen",
    "fairgen.ckpt": "train-fairgen",
    "probe.ckpt": "train-probe",
    "evaluation.json": "evaluate",
}


class Run:
    def __init__(self, cfg: RunConfig, out):
        self.cfg = cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.fingerprint = cfg.fingerprint()

    # paths -------------------------------------------------------------
    @property
    def corpus_dir(self) -> Path:
        return Path(self.cfg.paths.corpus) if self.cfg.paths.corpus else self.out / "corpus"

    def prepared(self, split) -> Path:
        return self.out / "prepared" / f"{split}.npz"

    def require(self, path: Path, artifact: str):
        if not path.exists():
            raise MissingArtifactError(path, PRODUCERS[artifact])
        return path

    def write_meta(self, name: str, **extra):
        meta = {"fingerprint": self.fingerprint, "stage": name, **extra}
        (self.out / f"{name}.meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))

    def fingerprints(self) -> dict[str, str]:
        return {p.name[:-len(".meta.json")]: json.loads(p.read_text())["fingerprint"]
                for p in sorted(self.out.glob("*.meta.json"))}

    # stages ------------------------------------------------------------
    def synth(self):
        paths = synth.generate_corpus(self.cfg.synth, self.corpus_dir)
        self.write_meta("synth", digest=synth.corpus_digest(self.corpus_dir))
        return paths

    def load_manifests(self):
        manifests = []
        for split in data.SPLITS:
            path = self.corpus_dir / f"{split.lower()}.json"
            self.require(path, "corpus")
            manifests.append(data.load_manifest(path))
        return manifests

    def prepare(self):
        prepared = data.prepare_corpus(self.load_manifests(), self.cfg.paths.confidence_threshold)
        (self.out / "prepared").mkdir(exist_ok=True)
        counts = {}
        for split, p in prepared.items():
            p.save(self.prepared(split))
            counts[split] = p.segments(with_speech=False).counts()
        stats = prepared["SetGen"].stats
        (self.out / "prepared" / "normalization.json").write_text(json.dumps(stats.to_dict()))
        self.write_meta("prepare", counts=counts)
        return prepared

    def load_split(self, split, with_speech=True) -> PreparedSplit:
        return PreparedSplit.load(self.require(self.prepared(split), "prepared"), with_speech)

    def train_facegen(self):
        gen_split = self.load_split("SetGen")
        segments = gen_split.segments()
        result = train_facegen(segments, gen_split.stats, self.cfg.train, self.cfg.arch,
                               checkpoint=self.out / "facegen.ckpt",
                               loss_csv=self.out / "facegen_losses.csv",
                               extra_payload={"fingerprint": self.fingerprint})
        self.write_meta("train-facegen", epochs=len(result.history))
        return result

    def train_fairgen(self):
        init = self.require(self.out / "facegen.ckpt", "facegen.ckpt")
        gen_split = self.load_split("SetGen")
        generator, discriminator, _, payload = load_checkpoint(init)
        if payload.get("fingerprint") != self.fingerprint:
            log.warning("facegen.ckpt was produced under a different config")
        if asdict(generator.cfg) != asdict(self.cfg.arch):
            raise ConfigError("facegen.ckpt architecture differs from the configured arch")
        result = train_fairgendergen(gen_split.segments(), gen_split.stats,
                                     (generator, discriminator), self.cfg.fair,
                                     checkpoint=self.out / "fairgen.ckpt",
                                     loss_csv=self.out / "fairgen_losses.csv",
                                     extra_payload={"fingerprint": self.fingerprint})
        self.write_meta("train-fairgen", epochs=len(result.history))
        return result

    def train_probe(self):
        split = self.load_split("SetClassif", with_speech=False)
        report, model = train_probe(split.segments(with_speech=False), self.cfg.probe)
        save_probe(self.out / "probe.ckpt", model, self.cfg.probe,
                   {"fingerprint": self.fingerprint})
        (self.out / "probe_report.json").write_text(json.dumps(report.to_dict(), indent=1))
        self.write_meta("train-probe", mean_accuracy=report.mean)
        return report

    def evaluate(self):
        facegen_path = self.require(self.out / "facegen.ckpt", "facegen.ckpt")
        fairgen_path = self.out / "fairgen.ckpt"
        probe_path = self.require(self.out / "probe.ckpt", "probe.ckpt")
        test = self.load_split("TestSet")
        probe = load_probe(probe_path)
        cap = self.cfg.eval.dtw_cap
        seed = self.cfg.eval.generation_seed

        gt_segments = test.segments(with_speech=False)
        truth = metrics.truth_videos(test)
        by_id = {v.video_id: v for v in test.videos}

        def gap_input(seqs):
            return [(seqs[vid], by_id[vid].speaking, by_id[vid].gender) for vid in sorted(seqs)]

        leakage = {"Ground truth": audit_leakage(probe, gt_segments.behavior, gt_segments.labels,
                                                 "Ground truth")}
        gap = {"Ground truth": metrics.gender_gap_dtw(gap_input(truth), cap)}
        gt_dtw = {"Static": metrics.groundtruth_dtw(
            {vid: metrics.static_baseline(t) for vid, t in truth.items()}, truth)}

        models = [("FaceGen", facegen_path, "facegen")]
        if fairgen_path.exists():
            models.append(("FairGenderGen", fairgen_path, "fairgen"))
        else:
            log.warning("fairgen.ckpt missing; FairGenderGen columns will read n/a")
        for name, path, tag in models:
            generator, _, stats, _ = load_checkpoint(path)
            stitched, windows, segs = metrics.generate_videos(generator, test, seed)
            leakage[name] = audit_leakage(probe, windows, segs.labels, name)
            raw = {vid: stats.denormalize(seq) for vid, seq in stitched.items()}
            gap[name] = metrics.gender_gap_dtw(gap_input(raw), cap)
            gt_dtw[name] = metrics.groundtruth_dtw(raw, truth)
            metrics.export_embeddings(self.out / f"embeddings_{tag}.f32", windows, segs.labels,
                                      {"source": name, "fingerprint": self.fingerprint})
        evaluation = {
            "fingerprint": self.fingerprint,
            "leakage": {k: v.to_dict() for k, v in leakage.items()},
            "gender_gap_dtw": {k: v.to_dict() for k, v in gap.items()},
            "groundtruth_dtw": {k: v.to_dict() for k, v in gt_dtw.items()},
        }
        (self.out / "evaluation.json").write_text(json.dumps(evaluation, indent=1))
        self.write_meta("evaluate")
        return evaluation

    def report(self, force: bool = False):
        evaluation = json.loads(self.require(self.out / "evaluation.json", "evaluation.json").read_text())
        probe_report = self.out / "probe_report.json"
        validation = (ProbeReport.from_dict(json.loads(probe_report.read_text()))
                      if probe_report.exists() else None)
        prints = self.fingerprints()
        prints["evaluation"] = evaluation.get("fingerprint", "")
        distinct = set(prints.values())
        if len(distinct) > 1 and not force:
            raise ConfigError(f"artifacts come from different configs {prints}; pass --force to mix")
        report = metrics.assemble_report(
            evaluation["leakage"], evaluation["gender_gap_dtw"], evaluation["groundtruth_dtw"],
            validation, self.fingerprint, {"seed": self.cfg.seed,
                                           "generation_seed": self.cfg.eval.generation_seed},
            {"fingerprints": prints})
        text = metrics.render_report(report)
        (self.out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
        (self.out / "report.txt").write_text(text)
        return report, text

    def run_all(self):
        self.synth()
        self.prepare()
        self.train_facegen()
        self.train_fairgen()
        self.train_probe()
        self.evaluate()
        return self.report()


def speaking_windows(segments):
    keep = segments.labels != Gender.SILENCE
    return segments.behavior[keep], segments.labels[keep]


def label_counts(labels) -> dict[str, int]:
    labels = np.asarray(labels)
    return {str(g): int((labels == g).sum()) for g in Gender}
