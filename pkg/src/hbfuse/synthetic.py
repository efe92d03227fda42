"""Synthetic five-class heartbeats shaped like the standardized MIT-BIH beats.

Each beat starts at an R peak, runs for a class-dependent RR interval built
from Gaussian waves (QRS, T, next P), is min-max scaled to [0, 1] and
zero-padded to 187 samples. Only useful for demonstrations and tests that
need data with learnable structure; it is not a stand-in for real ECG.
"""
from __future__ import annotations

import numpy as np

from .ingest import MITBIH_CLASSES, DatasetSplit, HeartbeatSet

# (rr range, qrs width, t amplitude, t centre fraction, p amplitude, spike)
_MORPHOLOGY = {
    0: ((110, 150), 2.5, 0.30, 0.45, 0.12, False),   # N
    1: ((70, 100), 2.5, 0.25, 0.50, 0.02, False),    # S: premature, weak P
    2: ((120, 160), 7.0, -0.45, 0.40, 0.0, False),   # V: wide QRS, inverted T
    3: ((105, 140), 4.5, -0.05, 0.45, 0.07, False),  # F: between N and V
    4: ((110, 150), 6.0, 0.20, 0.50, 0.0, True),     # Q: paced
}


def synth_beat(label: int, rng: np.random.Generator, length: int = 187,
               noise: float = 0.03) -> np.ndarray:
    (rr_lo, rr_hi), qrs_w, t_amp, t_pos, p_amp, spike = _MORPHOLOGY[label]
    rr = int(rng.integers(rr_lo, rr_hi + 1))
    t = np.arange(rr, dtype=np.float64)
    qrs_w *= rng.uniform(0.8, 1.25)
    x = np.exp(-0.5 * (t / qrs_w) ** 2)
    x -= 0.25 * np.exp(-0.5 * ((t - 2.2 * qrs_w) / (0.8 * qrs_w)) ** 2)
    tc = t_pos * rr * rng.uniform(0.9, 1.1)
    x += t_amp * rng.uniform(0.8, 1.2) * np.exp(-0.5 * ((t - tc) / (0.07 * rr)) ** 2)
    x += p_amp * rng.uniform(0.6, 1.4) * np.exp(-0.5 * ((t - 0.88 * rr) / 4.0) ** 2)
    if spike:
        x -= 0.5 * np.exp(-0.5 * ((t - (rr - 3)) / 0.7) ** 2)
    x += rng.uniform(-0.05, 0.05) * t / rr
    x += noise * rng.standard_normal(rr)
    x = (x - x.min()) / (x.max() - x.min())
    out = np.zeros(length)
    out[:min(rr, length)] = x[:length]
    return out


def synth_set(counts, seed: int = 0, length: int = 187, noise: float = 0.03) -> HeartbeatSet:
    """``counts`` gives the number of beats per class id (sequence of 5 ints)."""
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.full(c, i, dtype=np.int64) for i, c in enumerate(counts)])
    samples = np.stack([synth_beat(int(y), rng, length, noise) for y in labels]) \
        if len(labels) else np.zeros((0, length))
    return HeartbeatSet(samples, labels, MITBIH_CLASSES)


def synth_split(train_per_class: int = 100, test_per_class: int = 30, seed: int = 0,
                noise: float = 0.03) -> DatasetSplit:
    train = synth_set([train_per_class] * 5, seed, noise=noise)
    test = synth_set([test_per_class] * 5, seed + 10_000, noise=noise)
    return DatasetSplit(train, test, seed, {"dataset": "synthetic"})
