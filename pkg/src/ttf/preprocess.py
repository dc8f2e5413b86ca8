"""Reversible robust instance scaling and multi-scale moving-average smoothing.

Robust scaling centers each series on its median and divides by its
interquartile range (quantiles via linear interpolation between order
statistics, i.e. numpy's default), which keeps the transform insensitive
to outliers beyond the quartiles.  A zero IQR falls back to 1 (centering
only) so constant columns never divide by zero.

The moving average uses symmetric replicate padding: out-of-range
indices are clipped to the series ends, so output length equals input
length for any scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidBounds, InvalidConfig, ScaleTooLarge

IQR_FLOOR = 1e-12


@dataclass(frozen=True)
class RobustScaleParams:
    median: float
    iqr: float  # post-fallback, always > 0
    degenerate: bool = False  # True when the raw IQR was ~0 and 1 was substituted


def robust_scale(column) -> tuple[np.ndarray, RobustScaleParams]:
    """Scale one series to (x - median) / IQR; params allow exact inversion."""
    x = np.asarray(column, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InvalidConfig("robust_scale expects a non-empty 1-D sequence")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    degenerate = not iqr > IQR_FLOOR
    if degenerate:
        iqr = 1.0
    return (x - med) / iqr, RobustScaleParams(float(med), float(iqr), degenerate)


def inverse_robust_scale(scaled, params: RobustScaleParams) -> np.ndarray:
    """Exact inverse of robust_scale up to floating-point rounding."""
    return np.asarray(scaled, dtype=np.float64) * params.iqr + params.median


def clip(t: int, a: int, b: int) -> int:
    if a > b:
        raise InvalidBounds(f"clip bounds inverted: [{a}, {b}]")
    return a if t < a else b if t > b else t


def _validate_scale(length: int, scale: int) -> None:
    if scale < 1:
        raise InvalidConfig(f"moving-average scale must be >= 1, got {scale}")
    if scale > length:
        raise ScaleTooLarge(f"scale {scale} exceeds series length {length}")


@lru_cache(maxsize=256)
def _ma_taps(length: int, scale: int) -> np.ndarray:
    """(scale, length) tap-index table: taps[r, p] = clip(p + r - scale//2)."""
    _validate_scale(length, scale)
    pos = np.arange(length)
    return np.clip(pos[None, :] + np.arange(scale)[:, None] - scale // 2,
                   0, length - 1)


@lru_cache(maxsize=256)
def _ma_counts(length: int, scale: int) -> np.ndarray:
    """Dense tap-count matrix of the replicate-padded moving average.

    Row p hits positions clip(p + r - scale//2, 0, length-1) for
    r = 0..scale-1; boundary clipping stacks multiple taps on the edge
    cells.  counts / scale is the operator as a matrix; the forward pass
    below avoids the matmul (see moving_average), this form backs the
    adjoint and analysis.
    """
    _validate_scale(length, scale)
    counts = np.zeros((length, length), dtype=np.float64)
    offset = scale // 2
    for p in range(length):
        for r in range(scale):
            q = min(max(p + r - offset, 0), length - 1)
            counts[p, q] += 1.0
    return counts


def ma_operator(length: int, scale: int) -> np.ndarray:
    """Dense (length x length) averaging matrix; rows sum to 1."""
    return _ma_counts(length, scale) / scale


def moving_average(matrix, scale: int) -> np.ndarray:
    """Smooth along the time axis (first of the last two dims), shape-preserving.

    Accepts (l,), (l, k), or batched (..., l, k) arrays; scale 1 is the
    identity.  Computed in deviation form, x + mean_r(x[tap_r] - x):
    constant columns survive any scale bit-for-bit because every tap
    deviation is exactly zero, and each output cell sees the same add
    sequence as a scalar per-cell loop (no reassociation inside a matmul).
    """
    x = np.asarray(matrix, dtype=np.float64)
    if scale == 1:
        return x.copy()
    axis = 0 if x.ndim == 1 else x.ndim - 2
    acc = np.zeros_like(x)
    for row in _ma_taps(x.shape[axis], scale):
        acc += np.take(x, row, axis=axis) - x
    return x + acc / scale


def moving_average_adjoint(grad, scale: int) -> np.ndarray:
    """Transpose of the moving-average operator, for gradient propagation."""
    g = np.asarray(grad, dtype=np.float64)
    if scale == 1:
        return g.copy()
    length = g.shape[0] if g.ndim == 1 else g.shape[-2]
    counts = _ma_counts(length, scale)
    if g.ndim == 1:
        return (counts.T @ g) / scale
    return np.matmul(counts.T, g) / scale


def validate_scales(scales) -> tuple[int, ...]:
    """Smoothing-scale list: positive ints, strictly increasing, first = 1.

    Tower 0 always consumes the raw input, hence the leading 1.  Odd
    scales center exactly; even ones are accepted with the floor(w/2)
    left offset the formula prescribes.
    """
    scales = tuple(int(w) for w in scales)
    if not scales or scales[0] != 1:
        raise InvalidConfig(f"scales must start with 1, got {scales!r}")
    if any(w < 1 for w in scales):
        raise InvalidConfig(f"scales must be positive, got {scales!r}")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise InvalidConfig(f"scales must be strictly increasing, got {scales!r}")
    return scales


# --- window-level scaling -------------------------------------------------
#
# Per-column scaling of a batch of trapezoid windows.  Statistics are
# computed over each column's valid region only (the structural zero
# prefix would bias the median of short-info columns); prefix entries
# stay exactly 0 after scaling.

def batch_scale_stats(inputs: np.ndarray, prefixes: np.ndarray):
    """Median/IQR per (window, column) over the valid region.

    inputs: (B, l, k); prefixes: (k,) leading-zero counts per column.
    Returns medians (B, k), iqrs (B, k) post-fallback, degenerate (B, k) bool.
    """
    nwin, _, k = inputs.shape
    medians = np.empty((nwin, k))
    iqrs = np.empty((nwin, k))
    for j in range(k):
        valid = inputs[:, int(prefixes[j]):, j]
        q1, med, q3 = np.quantile(valid, [0.25, 0.5, 0.75], axis=1)
        medians[:, j] = med
        iqrs[:, j] = q3 - q1
    degenerate = ~(iqrs > IQR_FLOOR)
    iqrs = np.where(degenerate, 1.0, iqrs)
    return medians, iqrs, degenerate


def batch_scale_inputs(inputs, prefixes, medians, iqrs) -> np.ndarray:
    """Apply per-column scaling to (B, l, k) inputs, keeping prefixes at 0."""
    scaled = (inputs - medians[:, None, :]) / iqrs[:, None, :]
    length = inputs.shape[1]
    pad_mask = np.arange(length)[:, None] < prefixes[None, :]  # (l, k)
    scaled[:, pad_mask] = 0.0
    return scaled


def batch_scale_values(values, medians, iqrs) -> np.ndarray:
    """Scale target-shaped (B, n, k) values with the input columns' params."""
    return (values - medians[:, None, :]) / iqrs[:, None, :]


def batch_inverse_scale(scaled, medians, iqrs) -> np.ndarray:
    return scaled * iqrs[:, None, :] + medians[:, None, :]
