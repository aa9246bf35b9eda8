"""Train FaceGen briefly, fine-tune it with the gender adversary, and audit both.

A few epochs only, so the numbers are rough; `fairgen` with configs/desk.json
runs the full desk-scale experiment.

    python3 demos/train_and_debias.py
"""
import tempfile
from pathlib import Path

from fairgen import data, synth
from fairgen.fair import FairTrainConfig, train_fairgendergen
from fairgen.metrics import generate_videos
from fairgen.models import ArchConfig, load_checkpoint
from fairgen.probe import ProbeConfig, audit_leakage, train_probe
from fairgen.training import TrainConfig, train_facegen

work = Path(tempfile.mkdtemp(prefix="fairgen-demo-"))
paths = synth.generate_corpus(synth.SynthConfig(scale=0.03, seed=1), work / "corpus")
prepared = data.prepare_corpus([data.load_manifest(paths[s]) for s in data.SPLITS])
gen = prepared["SetGen"]

arch = ArchConfig(hidden=32)
facegen = train_facegen(gen.segments(), gen.stats, TrainConfig(epochs=8, seed=1), arch,
                        checkpoint=work / "facegen.ckpt")
print("FaceGen L_G by epoch:", [round(r["L_G"], 2) for r in facegen.history])

fair = train_fairgendergen(gen.segments(), gen.stats, work / "facegen.ckpt",
                           FairTrainConfig(epochs=6, seed=1), checkpoint=work / "fairgen.ckpt")
print("gender head loss by epoch:", [round(r["L_gender"], 3) for r in fair.history])

report, probe = train_probe(prepared["SetClassif"].segments(with_speech=False),
                            ProbeConfig(repeats=3, epochs=5))
print(f"probe validation accuracy {100 * report.mean:.1f}% +/- {100 * report.std:.1f}")

test = prepared["TestSet"]
truth = test.segments(with_speech=False)
print(f"leakage on ground truth: {100 * audit_leakage(probe, truth.behavior, truth.labels).accuracy:.1f}%")
for name in ("facegen", "fairgen"):
    generator, _, _, _ = load_checkpoint(work / f"{name}.ckpt")
    _, windows, segs = generate_videos(generator, test)
    acc = audit_leakage(probe, windows, segs.labels).accuracy
    print(f"leakage on {name}: {100 * acc:.1f}%")
