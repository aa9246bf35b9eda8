import numpy as np

from fairgen.data import NormalizationStats, SegmentSet

STATS = NormalizationStats(np.zeros(28), np.ones(28))


def tiny_segments(n=8, seed=0):
    """Random speech/behavior windows with a fixed female/male/silence mix."""
    rng = np.random.default_rng(seed)
    return SegmentSet(
        behavior=rng.uniform(-1, 1, (n, 100, 28)).astype(np.float32),
        labels=np.resize([0, 1, 2, 0, 1, 0, 1, 2], n),
        video_index=np.zeros(n, int), window_index=np.arange(n),
        speech=rng.standard_normal((n, 200, 1024)).astype(np.float32))
