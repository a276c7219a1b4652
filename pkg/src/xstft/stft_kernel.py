"""Non-trainable STFT kernels.

A depthwise STFT layer looks at the ``n_t x n_h x n_w`` window around every
position and reports the real and imaginary parts of the local Fourier
coefficients at ``K`` low frequencies.  Everything needed to do that is built
here once and then shared read-only:

* :class:`FreqSet` - the frequency points, as integer sign patterns in
  ``{-1, 0, +1}`` scaled by ``k = 1/n`` cycles per sample;
* :class:`StftBasis` - the dense ``2K x prod(n)`` real matrix ``W`` and the
  per-axis complex 1D factors used by the fast separable path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .tensor import neighborhood_offsets

# Published orderings.  The 3D list is v_1..v_13; the 2D list is the four
# spatial points used by the spatial-only variant.
_SIGNS_3D = (
    (1, 0, 0), (1, 0, 1), (1, 0, -1),
    (0, 1, 0), (0, 1, 1), (0, 1, -1),
    (1, 1, 0), (1, 1, 1), (1, 1, -1),
    (1, -1, 0), (1, -1, 1), (1, -1, -1),
    (0, 0, 1),
)
_SIGNS_2D = ((1, 0), (0, 1), (1, 1), (1, -1))
_SIGNS_1D = ((1,),)
PUBLISHED_SIGNS = {1: _SIGNS_1D, 2: _SIGNS_2D, 3: _SIGNS_3D}

# Column order of the per-axis factor tables: DC, +k, -k.
AXIS_SIGNS = (0, 1, -1)


def conjugate_free_patterns(dims: int) -> set[tuple[int, ...]]:
    """All non-DC sign patterns on the ``{-1,0,1}^dims`` grid with one of each
    conjugate pair kept (the one whose first non-zero entry is positive)."""
    keep = set()
    for p in itertools.product((-1, 0, 1), repeat=dims):
        if not any(p):
            continue
        first = next(v for v in p if v != 0)
        keep.add(p if first > 0 else tuple(-v for v in p))
    return keep


@dataclass(frozen=True)
class FreqSet:
    dims: int
    n: int
    signs: tuple[tuple[int, ...], ...]

    @property
    def K(self) -> int:
        return len(self.signs)

    @property
    def k(self) -> float:
        return 1.0 / self.n

    @property
    def points(self) -> np.ndarray:
        """Frequency vectors in cycles per sample, shape ``[K, dims]``."""
        return np.asarray(self.signs, dtype=np.float64) / self.n


def enumerate_frequencies(dims: int, n: int) -> FreqSet:
    """Lowest non-zero, conjugate-free frequency points for a ``dims``-D window.

    K is 13, 4 and 1 for three, two and one windowed axes.
    """
    if dims not in (1, 2, 3):
        raise ValueError(f"dims must be 1, 2 or 3, got {dims}")
    if n < 3 or n % 2 == 0:
        raise ValueError(f"window extent must be odd and >= 3, got {n}")
    return FreqSet(dims=dims, n=int(n), signs=PUBLISHED_SIGNS[dims])


@dataclass(frozen=True)
class SeparableStage:
    """One 1D convolution of the separable evaluation tree.

    ``parent`` and ``child`` are sign prefixes (``()`` is the real input);
    the child is the parent convolved along window axis ``axis`` with the
    factor column for ``sign``.
    """

    axis: int
    parent: tuple[int, ...]
    child: tuple[int, ...]
    sign: int

    @property
    def parent_complex(self) -> bool:
        return any(self.parent)

    @property
    def factor_complex(self) -> bool:
        return self.sign != 0

    def real_macs_per_tap(self) -> int:
        """Real multiply-accumulates per tap per output element."""
        return (2 if self.parent_complex else 1) * (2 if self.factor_complex else 1)


def separable_plan(signs) -> list[SeparableStage]:
    """Prefix tree of 1D convolutions that yields every point in ``signs``.

    Shared prefixes are computed once, so e.g. the 13 three-dimensional points
    need 3 + 5 + 13 axis convolutions instead of 39.
    """
    dims = len(signs[0])
    stages = []
    for axis in range(dims):
        seen = []
        for s in signs:
            prefix = tuple(s[: axis + 1])
            if prefix not in seen:
                seen.append(prefix)
        for prefix in seen:
            stages.append(SeparableStage(axis, prefix[:-1], prefix, prefix[-1]))
    return stages


@dataclass(frozen=True)
class StftBasis:
    freqs: FreqSet
    n_per_axis: tuple[int, int, int]
    window_axes: tuple[int, ...]
    W: np.ndarray = field(repr=False)
    separable: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def K(self) -> int:
        return self.freqs.K

    @property
    def out_per_channel(self) -> int:
        return 2 * self.freqs.K

    @property
    def radius(self) -> tuple[int, int, int]:
        return tuple((n - 1) // 2 for n in self.n_per_axis)

    def plan(self) -> list[SeparableStage]:
        return separable_plan(self.freqs.signs)

    def factor(self, window_axis: int, sign: int, dtype=np.complex128) -> np.ndarray:
        return self.separable[window_axis][:, AXIS_SIGNS.index(sign)].astype(dtype)


def build_basis(freqs: FreqSet, n_per_axis) -> StftBasis:
    """Dense transformation matrix ``W`` (rows Re/Im per point) plus factors.

    Columns follow :func:`~xstft.tensor.neighborhood_offsets` order over the
    full ``(n_t, n_h, n_w)`` window; ``delta = x - y`` is the negated offset.
    """
    n_per_axis = tuple(int(v) for v in n_per_axis)
    if len(n_per_axis) != 3:
        raise ValueError("n_per_axis must give (n_t, n_h, n_w)")
    window_axes = tuple(a for a, v in enumerate(n_per_axis) if v > 1)
    if len(window_axes) != freqs.dims:
        raise ValueError(
            f"{freqs.dims}-D frequency set needs {freqs.dims} windowed axes, got {n_per_axis}"
        )
    for a in window_axes:
        if n_per_axis[a] != freqs.n:
            raise ValueError(f"windowed extents must equal n={freqs.n}, got {n_per_axis}")

    radius = [(v - 1) // 2 for v in n_per_axis]
    delta = -neighborhood_offsets(radius)[:, window_axes].astype(np.float64)
    phase = -2.0 * np.pi * (freqs.points @ delta.T)  # [K, |N|]
    W = np.empty((2 * freqs.K, delta.shape[0]))
    W[0::2] = np.cos(phase)
    W[1::2] = np.sin(phase)
    W.setflags(write=False)

    basis = StftBasis(
        freqs=freqs,
        n_per_axis=n_per_axis,
        window_axes=window_axes,
        W=W,
        separable=factor_separable_tables(freqs, n_per_axis, window_axes),
    )
    return basis


def factor_separable_tables(freqs: FreqSet, n_per_axis, window_axes) -> tuple[np.ndarray, ...]:
    tables = []
    for a in window_axes:
        n = n_per_axis[a]
        r = (n - 1) // 2
        delta = r - np.arange(n)  # gather index i <-> offset i - r
        s = np.asarray(AXIS_SIGNS, dtype=np.float64)
        table = np.exp(-2j * np.pi * np.outer(delta, s) / freqs.n)
        table.setflags(write=False)
        tables.append(table)
    return tuple(tables)


def factor_separable(basis: StftBasis) -> tuple[np.ndarray, ...]:
    """Per-axis complex 1D factors, shape ``n_axis x 3`` (columns DC, +k, -k)."""
    return basis.separable


def recompose_dense(basis: StftBasis) -> np.ndarray:
    """Rebuild ``W`` from the separable factors via outer products."""
    rows = []
    for sign in basis.freqs.signs:
        window = np.ones((1,), dtype=np.complex128)
        for j, s in enumerate(sign):
            window = np.multiply.outer(window, basis.factor(j, s)).reshape(-1)
        rows.append(window.real)
        rows.append(window.imag)
    return np.stack(rows)
