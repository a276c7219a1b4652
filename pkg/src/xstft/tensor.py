"""Dense tensor helpers.

Feature maps are plain numpy arrays laid out row-major as
``[batch, channel, time, height, width]``.  This module adds the handful of
checked primitives the rest of the package relies on: zero padding and its
inverse crop, local neighborhood gathering, and a few contractions with a
fixed (serial, left-to-right) summation order.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

FLOAT_DTYPES = (np.float64, np.float32)


def as_tensor(x, dtype=None) -> np.ndarray:
    """Return ``x`` as a contiguous float array, validating its extents."""
    arr = np.ascontiguousarray(x, dtype=dtype if dtype is not None else None)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    if arr.ndim == 0 or any(s < 1 for s in arr.shape):
        raise ValueError(f"every extent must be >= 1, got shape {arr.shape}")
    return arr


def strides_of(shape: Sequence[int]) -> tuple[int, ...]:
    """Row-major element strides (last axis fastest)."""
    out = []
    acc = 1
    for extent in reversed(shape):
        out.append(acc)
        acc *= extent
    return tuple(reversed(out))


def offset_of(shape: Sequence[int], index: Sequence[int]) -> int:
    if len(index) != len(shape):
        raise IndexError(f"index rank {len(index)} != tensor rank {len(shape)}")
    for i, n in zip(index, shape):
        if not 0 <= i < n:
            raise IndexError(f"index {tuple(index)} out of range for shape {tuple(shape)}")
    return sum(i * s for i, s in zip(index, strides_of(shape)))


def _check_pads(x: np.ndarray, pads) -> list[tuple[int, int]]:
    pads = [tuple(int(v) for v in p) for p in pads]
    if len(pads) != x.ndim:
        raise ValueError(f"need one (lo, hi) pad pair per axis: rank {x.ndim}, got {len(pads)}")
    for p in pads:
        if len(p) != 2 or p[0] < 0 or p[1] < 0:
            raise ValueError(f"pad amounts must be non-negative pairs, got {p}")
    return pads


def zero_pad(x: np.ndarray, pads) -> np.ndarray:
    """Pad every axis with zeros; ``pads`` holds one ``(lo, hi)`` pair per axis."""
    pads = _check_pads(x, pads)
    if all(p == (0, 0) for p in pads):
        return x.copy()
    out = np.zeros(tuple(n + lo + hi for n, (lo, hi) in zip(x.shape, pads)), dtype=x.dtype)
    out[tuple(slice(lo, lo + n) for n, (lo, _) in zip(x.shape, pads))] = x
    return out


def crop(x: np.ndarray, pads) -> np.ndarray:
    """Inverse of :func:`zero_pad` for the same pad amounts."""
    pads = _check_pads(x, pads)
    for n, (lo, hi) in zip(x.shape, pads):
        if lo + hi >= n:
            raise ValueError(f"cannot crop {(lo, hi)} from an axis of extent {n}")
    return x[tuple(slice(lo, n - hi) for n, (lo, hi) in zip(x.shape, pads))].copy()


def neighborhood_offsets(radius: Sequence[int]) -> np.ndarray:
    """Offsets ``y - x`` of a window, time-major then height then width, each -r..r."""
    axes = [np.arange(-r, r + 1) for r in radius]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1)


def neighborhood_gather(x: np.ndarray, center: Sequence[int], r) -> np.ndarray:
    """Collect the ``(2r+1)^3`` window around ``center`` of a ``[t, h, w]`` tensor.

    Positions outside ``x`` read as zero (the tensor is treated as zero padded
    by ``r``); the center itself must lie inside ``x``.
    """
    if x.ndim != 3:
        raise ValueError(f"expected a [t, h, w] tensor, got rank {x.ndim}")
    radius = (r, r, r) if np.isscalar(r) else tuple(r)
    center = tuple(int(c) for c in center)
    offset_of(x.shape, center)  # bounds check
    padded = zero_pad(x, [(q, q) for q in radius])
    lo = [c for c in center]  # center + r - r in padded coordinates
    window = padded[tuple(slice(c, c + 2 * q + 1) for c, q in zip(lo, radius))]
    return window.reshape(-1).copy()


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    return alpha * x + y


def reduce_sum(x: np.ndarray, axis=None) -> np.ndarray | float:
    """Sum with a fixed left-to-right accumulation order along each reduced axis.

    ``np.sum`` uses pairwise summation whose grouping depends on memory layout;
    an explicit running sum keeps results byte-stable across calls.
    """
    if axis is None:
        return float(reduce_sum(x.reshape(-1), axis=0))
    x = np.moveaxis(np.asarray(x), axis, 0)
    acc = np.zeros(x.shape[1:], dtype=x.dtype)
    for row in x:
        acc = acc + row
    return acc


def argmax(x: np.ndarray, axis=None):
    """First maximum wins on ties (numpy semantics)."""
    return np.argmax(x, axis=axis)
