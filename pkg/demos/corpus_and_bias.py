"""Generate a small synthetic corpus and look at where the gender bias lives.

    python3 demos/corpus_and_bias.py
"""
import tempfile

import numpy as np

from fairgen import data, synth
from fairgen.data import Gender

cfg = synth.SynthConfig(scale=0.02, seed=0)
out = tempfile.mkdtemp(prefix="fairgen-demo-")
paths = synth.generate_corpus(cfg, out)
print("corpus written to", out)

prepared = data.prepare_corpus([data.load_manifest(paths[s]) for s in data.SPLITS])
for split, p in prepared.items():
    print(f"{split:10s} windows {p.segments(with_speech=False).counts()}")

# raw per-channel means over speaking frames, female minus male
frames = {g: [] for g in (Gender.FEMALE, Gender.MALE)}
for v in prepared["SetGen"].videos:
    frames[v.gender].append(v.behavior[v.speaking])
diff = np.concatenate(frames[Gender.FEMALE]).mean(0) - np.concatenate(frames[Gender.MALE]).mean(0)
for i in np.argsort(-np.abs(diff))[:4]:
    print(f"{data.BEHAVIOR_COLUMNS[i]:>12s}  female - male = {diff[i]:+.3f}")

# the same law without the bias term
_, beh, labels = synth.generate_segments(synth.SynthConfig(bias_strength=0.0),
                                         ["female"] * 50 + ["male"] * 50, seed=1)
gap = beh[labels == 0].mean((0, 1)) - beh[labels == 1].mean((0, 1))
print("largest gap without bias:", f"{np.abs(gap).max():.3f}")
