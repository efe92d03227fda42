"""Image-level and feature-level fusion of the three encodings.

Feature arrays may be single vectors ``(D,)`` or batches ``(n, D)``; all
operations act on the last axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MODALITIES = ("gaf", "rp", "mtf")


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class HighBoostKernel:
    """High-boost sharpening kernel with amplification factor ``c``.

    ``mode="1d"`` convolves features with ``[-1, c + 2, -1]``; ``mode="2d"``
    reshapes them to a near-square grid and uses the 3x3 kernel with centre
    ``c + 8``. Both kernels sum to ``c``.
    """
    c: float = 1.0
    mode: str = "1d"

    def __post_init__(self):
        if self.mode not in ("1d", "2d"):
            raise ValueError(f"unknown high-boost mode {self.mode!r}")

    @property
    def kernel1d(self) -> np.ndarray:
        return np.array([-1.0, self.c + 2.0, -1.0])

    @property
    def kernel2d(self) -> np.ndarray:
        k = -np.ones((3, 3))
        k[1, 1] = self.c + 8.0
        return k


def compose_mif(gaf, rp, mtf) -> np.ndarray:
    """Stack three gray images (or image batches) as channels GAF, RP, MTF.

    Single ``(h, w)`` images give ``(3, h, w)``; batches ``(n, h, w)`` give
    ``(n, 3, h, w)``.
    """
    gaf, rp, mtf = (np.asarray(a) for a in (gaf, rp, mtf))
    if not gaf.shape == rp.shape == mtf.shape:
        raise FusionError(f"channel shapes differ: {gaf.shape}, {rp.shape}, {mtf.shape}")
    return np.stack([gaf, rp, mtf], axis=-3)


def grid_shape(d: int) -> tuple:
    """Rows x cols factorization of ``d`` with rows the largest divisor <= sqrt(d)."""
    rows = int(np.floor(np.sqrt(d)))
    while d % rows:
        rows -= 1
    return rows, d // rows


def high_boost_filter(f, kernel: HighBoostKernel = HighBoostKernel()) -> np.ndarray:
    """Zero-padded 'same' convolution of features with the high-boost kernel."""
    f = np.asarray(f, dtype=np.float64)
    d = f.shape[-1]
    if d < 3:
        raise FusionError("high-boost filtering needs at least 3 features")
    if kernel.mode == "1d":
        a, b, _ = kernel.kernel1d
        out = b * f
        out[..., 1:] += a * f[..., :-1]
        out[..., :-1] += a * f[..., 1:]
        return out
    rows, cols = grid_shape(d)
    g = f.reshape(f.shape[:-1] + (rows, cols))
    pad = np.zeros(g.shape[:-2] + (rows + 2, cols + 2))
    pad[..., 1:-1, 1:-1] = g
    k = kernel.kernel2d
    out = np.zeros_like(g)
    for i in range(3):
        for j in range(3):
            out += k[i, j] * pad[..., i:i + rows, j:j + cols]
    return out.reshape(f.shape)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_same(f1, f2, f3):
    f1, f2, f3 = (np.asarray(f, dtype=np.float64) for f in (f1, f2, f3))
    if not f1.shape == f2.shape == f3.shape:
        raise FusionError(f"feature shapes differ: {f1.shape}, {f2.shape}, {f3.shape}")
    return f1, f2, f3


def gates(f, kernel: HighBoostKernel = HighBoostKernel()) -> np.ndarray:
    """Per-element gate weights ``sigmoid(f * K)``."""
    return sigmoid(high_boost_filter(f, kernel))


def gated_fuse(f1, f2, f3, kernel: HighBoostKernel = HighBoostKernel(),
               override_gates=None) -> np.ndarray:
    """Gated fusion: ``sum_i sigmoid(hb(f_i)) * f_i``; output keeps dimension D.

    ``override_gates`` replaces the three computed gates with the given
    constants (``1`` for all reproduces :func:`average_fuse`).
    """
    f1, f2, f3 = _check_same(f1, f2, f3)
    if override_gates is None:
        w1, w2, w3 = gates(f1, kernel), gates(f2, kernel), gates(f3, kernel)
    else:
        w1, w2, w3 = np.broadcast_to(override_gates, (3,))
    return w1 * f1 + w2 * f2 + w3 * f3


def average_fuse(f1, f2, f3, scale: bool = False) -> np.ndarray:
    """Unit-weight sum ``f1 + f2 + f3`` (divided by 3 if ``scale``)."""
    f1, f2, f3 = _check_same(f1, f2, f3)
    out = f1 + f2 + f3
    return out / 3.0 if scale else out


def concat_fuse(f1, f2, f3) -> np.ndarray:
    """Concatenate along the feature axis in modality order."""
    return np.concatenate([np.asarray(f, dtype=np.float64) for f in (f1, f2, f3)], axis=-1)


FUSERS = {
    "gfn": gated_fuse,
    "avg": average_fuse,
    "concat": concat_fuse,
}


def fuse(method: str, f1, f2, f3, kernel: HighBoostKernel = HighBoostKernel()) -> np.ndarray:
    if method == "gfn":
        return gated_fuse(f1, f2, f3, kernel)
    if method not in FUSERS:
        raise FusionError(f"unknown fusion method {method!r}")
    return FUSERS[method](f1, f2, f3)
