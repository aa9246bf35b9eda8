"""Dynamic time warping on toy signals, then the gender-gap measure.

    python3 demos/dtw_metrics.py
"""
import numpy as np

from fairgen.metrics import dtw, gender_gap_dtw, static_baseline

t = np.linspace(0, 2 * np.pi, 80)
wave = np.sin(t)
print("identical       ", dtw(wave, wave))
print("time-stretched  ", round(dtw(wave, np.sin(np.linspace(0, 2 * np.pi, 120))), 3))
print("phase-shifted   ", round(dtw(wave, np.sin(t + 1.0)), 3))
print("against silence ", round(dtw(wave, static_baseline(wave)), 3))

rng = np.random.default_rng(0)


def speaker(gender, smile):
    beh = rng.standard_normal((400, 28)) * 0.3
    beh[:, 15] += smile  # AU06
    return beh, np.ones(400, bool), gender


for smile in (0.0, 1.0, 3.0):
    videos = [speaker(0, smile), speaker(1, 0.0), speaker(0, smile), speaker(1, 0.0)]
    res = gender_gap_dtw(videos)
    print(f"female AU06 offset {smile}: gender gap {res.mean:.4f} (AU06 alone {res.per_feature[15]:.3f})")
