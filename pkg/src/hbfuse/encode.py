"""Time series to image encoders: Gramian angular field, recurrence plot and
Markov transition field, plus the bilinear resize that brings them to the
network input size.

Every encoder returns an ``(n, n)`` float64 array with pixels in [0, 1].
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

logger = logging.getLogger(__name__)

INPUT_TOL = 1e-9


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class GafConfig:
    # C only scales the polar radius t_k / C, which never enters the field matrix.
    C: float = 1.0
    degenerate_value: float = 0.5

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("GafConfig.C must be positive")
        if not 0.0 <= self.degenerate_value <= 1.0:
            raise ValueError("degenerate_value must lie in [0, 1]")


@dataclass(frozen=True)
class RpConfig:
    """Recurrence plot settings.

    ``mode`` is ``"grayscale"`` (pixel = 1 - distance) or ``"binary"``
    (pixel = 1 where distance <= threshold). The binary threshold is either the
    absolute ``threshold`` or, when that is None, the ``percentile`` of the
    beat's own pairwise distances.
    """
    mode: str = "grayscale"
    threshold: Union[float, None] = None
    percentile: float = 10.0

    def __post_init__(self):
        if self.mode not in ("grayscale", "binary"):
            raise ValueError(f"unknown RP mode {self.mode!r}")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("RP threshold must be >= 0")
        if not 0.0 <= self.percentile <= 100.0:
            raise ValueError("RP percentile must lie in [0, 100]")

    @classmethod
    def from_spec(cls, mode: str, spec: str) -> "RpConfig":
        """Build from a CLI-style threshold: ``"p10"`` (percentile) or ``"0.05"``."""
        spec = str(spec).strip()
        if spec.lower().startswith("p"):
            return cls(mode=mode, percentile=float(spec[1:]))
        return cls(mode=mode, threshold=float(spec))


@dataclass(frozen=True)
class MtfConfig:
    bins: int = 10

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("MTF needs at least 2 bins")


@dataclass(frozen=True)
class EncoderConfig:
    gaf: GafConfig = GafConfig()
    rp: RpConfig = RpConfig()
    mtf: MtfConfig = MtfConfig()


def _check_samples01(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise EncodingError("expected a non-empty 1-D sample vector")
    if not np.all(np.isfinite(s)):
        raise EncodingError("samples must be finite")
    if s.min() < -INPUT_TOL or s.max() > 1 + INPUT_TOL:
        raise EncodingError("samples must lie in [0, 1]")
    return np.clip(s, 0.0, 1.0)


def normalize01(x, degenerate_value: float = 0.5) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant input maps to ``degenerate_value``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise EncodingError("cannot normalize an empty vector")
    if not np.all(np.isfinite(x)):
        raise EncodingError("cannot normalize non-finite values")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, degenerate_value)
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def gaf_field(s) -> np.ndarray:
    """Raw summation field in matrix form, values in [-1, 1].

    ``G = s^T s - sqrt(1 - s^2)^T sqrt(1 - s^2)``.
    """
    s = _check_samples01(s)
    c = np.sqrt(1.0 - s * s)
    return np.outer(s, s) - np.outer(c, c)


def gaf_field_angular(s) -> np.ndarray:
    """Raw summation field in angle form, ``cos(arccos s_k + arccos s_l)``."""
    beta = np.arccos(_check_samples01(s))
    return np.cos(beta[:, None] + beta[None, :])


def gaf(s, cfg: GafConfig = GafConfig()) -> np.ndarray:
    """Gramian angular (summation) field image, ``(G + 1) / 2``.

    Evaluated as ``cos^2((b_k + b_l) / 2) = (a_k a_l - h_k h_l)^2`` with
    ``a = sqrt((1 + s) / 2)`` and ``h = sqrt((1 - s) / 2)``; adding 1 to G
    directly cancels catastrophically for samples near 0.
    """
    s = _check_samples01(s)
    a = np.sqrt((1.0 + s) * 0.5)
    h = np.sqrt((1.0 - s) * 0.5)
    return np.clip((np.outer(a, a) - np.outer(h, h)) ** 2, 0.0, 1.0)


def gaf_diagonal_invert(image) -> np.ndarray:
    """Recover the samples from a :func:`gaf` image.

    The diagonal holds ``cos(2 arccos s) = 2 s^2 - 1``, so ``s = sqrt((G + 1) / 2)``.
    """
    image = np.asarray(image, dtype=np.float64)
    d = np.diag(image)
    if d.min() < -INPUT_TOL or d.max() > 1 + INPUT_TOL:
        raise EncodingError("GAF diagonal outside [-1, 1]")
    # (G + 1) / 2 is the image pixel itself; no need to go back through G
    return np.sqrt(np.clip(d, 0.0, 1.0))


def rp_threshold(s, cfg: RpConfig) -> float:
    if cfg.threshold is not None:
        return float(cfg.threshold)
    s = _check_samples01(s)
    if s.size < 2:
        return 0.0
    iu = np.triu_indices(s.size, k=1)
    return float(np.percentile(np.abs(s[:, None] - s[None, :])[iu], cfg.percentile))


def rp(s, cfg: RpConfig = RpConfig()) -> np.ndarray:
    """Recurrence plot of a scalar series (distance = absolute difference)."""
    s = _check_samples01(s)
    dist = np.abs(s[:, None] - s[None, :])
    if cfg.mode == "grayscale":
        return 1.0 - dist
    # heaviside(threshold - d) with heaviside(0) = 1
    return (dist <= rp_threshold(s, cfg)).astype(np.float64)


def quantile_bins(s, bins: int) -> np.ndarray:
    """Assign each sample to one of ``bins`` empirical-quantile bins.

    Values equal to a bin edge go to the lower bin, so a constant series
    occupies bin 0 only.
    """
    s = np.asarray(s, dtype=np.float64)
    edges = np.quantile(s, np.linspace(0.0, 1.0, bins + 1)[1:-1])
    return np.searchsorted(edges, s, side="left")


def transition_matrix(assignments, bins: int) -> np.ndarray:
    """Row-normalized first-order transition counts between bins.

    Rows without outgoing transitions become uniform ``1 / bins``.
    """
    a = np.asarray(assignments, dtype=np.int64)
    counts = np.zeros((bins, bins))
    np.add.at(counts, (a[:-1], a[1:]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    empty = totals[:, 0] == 0
    if np.any(empty[np.unique(a)]):
        logger.debug("mtf: occupied bin(s) %s without outgoing transition, using uniform row",
                     np.flatnonzero(empty & np.isin(np.arange(bins), a)).tolist())
    w = np.divide(counts, totals, out=np.full_like(counts, 1.0 / bins), where=~empty[:, None])
    return w


def mtf(s, cfg: MtfConfig = MtfConfig(), return_matrix: bool = False):
    """Markov transition field: ``M[i, j] = W[bin(s_i), bin(s_j)]``.

    Row index is the source bin of ``s_i``, column the destination bin of ``s_j``.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.size < 2:
        raise EncodingError("MTF needs at least 2 samples")
    s = _check_samples01(s)
    a = quantile_bins(s, cfg.bins)
    w = transition_matrix(a, cfg.bins)
    m = w[a[:, None], a[None, :]]
    return (m, w) if return_matrix else m


def _axis_weights(n_in: int, n_out: int):
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
    frac = pos - i0
    return i0, frac


def resize_bilinear(image, size: int) -> np.ndarray:
    """Corner-aligned bilinear resize of the last two axes to ``size x size``.

    Works on a single image or a stack ``(..., h, w)``. Interpolation is done
    in ``a + t (b - a)`` form so constant images are reproduced exactly.
    """
    img = np.asarray(image)
    h, w = img.shape[-2:]
    if h < 2 or w < 2 or size < 2:
        raise EncodingError("bilinear resize needs at least 2x2 input and output")
    if (h, w) == (size, size):
        return img.copy()
    lo, hi = img.min(), img.max()
    r0, ry = _axis_weights(h, size)
    c0, cx = _axis_weights(w, size)
    ry = ry.astype(img.dtype)[:, None]
    cx = cx.astype(img.dtype)
    top = img[..., r0, :]
    rows = top + ry * (img[..., r0 + 1, :] - top)
    left = rows[..., c0]
    out = left + cx * (rows[..., c0 + 1] - left)
    return np.clip(out, lo, hi)


ENCODERS = ("gaf", "rp", "mtf")


def encode_all(beat, configs: EncoderConfig = EncoderConfig(), out_size: int = 64):
    """Normalize a beat and return its ``(gaf, rp, mtf)`` images at ``out_size``."""
    s = normalize01(getattr(beat, "samples", beat), configs.gaf.degenerate_value)
    images = (gaf(s, configs.gaf), rp(s, configs.rp), mtf(s, configs.mtf))
    return tuple(resize_bilinear(im, out_size) for im in images)


def encode_batch(samples, configs: EncoderConfig = EncoderConfig(), out_size: int = 64,
                 dtype=np.float32) -> np.ndarray:
    """Encode ``(n, L)`` beats into an ``(n, 3, out_size, out_size)`` array.

    Channel order is GAF, RP, MTF.
    """
    samples = np.asarray(samples, dtype=np.float64)
    out = np.empty((samples.shape[0], 3, out_size, out_size), dtype=dtype)
    for i, x in enumerate(samples):
        for c, im in enumerate(encode_all(x, configs, out_size)):
            out[i, c] = im
    return out
