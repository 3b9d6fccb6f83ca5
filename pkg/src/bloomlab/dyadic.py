"""Dyadic grids, cubes, piecewise-constant functions and the Haar system.

A :class:`DyadicGrid` partitions the unit torus ``[0, 1)^n`` into ``2^(n*depth)``
leaf cells.  A shifted grid uses the same leaf cells, but its cubes start at
``shift`` (mod 1), so functions move between shifted grids without resampling.

Values of a :class:`GridFunction` are stored in *absolute* leaf order
(row-major over the leaf index vector).  Cube computations work on the
*local* array, which is the absolute array rolled so that local index 0 is
the first leaf of the grid's root cube.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


class ResolutionError(DomainError):
    """Raised when a cancellative Haar function is requested on a leaf cube."""


@dataclass(frozen=True)
class Cube:
    """Dyadic cube addressed by its level and index vector."""

    level: int
    index: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))
        if self.level < 0 or any(i < 0 or i >= 2**self.level for i in self.index):
            raise DomainError(f"invalid cube {self.level}:{self.index}")

    @property
    def dim(self) -> int:
        return len(self.index)

    @property
    def measure(self) -> float:
        return 2.0 ** (-self.dim * self.level)

    @property
    def parent(self) -> Cube:
        if self.level == 0:
            raise DomainError("the root cube has no parent")
        return Cube(self.level - 1, tuple(i // 2 for i in self.index))

    def child(self, bits: Sequence[int]) -> Cube:
        return Cube(self.level + 1, tuple(2 * i + int(b) for i, b in zip(self.index, bits)))

    def children(self) -> list[Cube]:
        return [self.child(bits) for bits in itertools.product((0, 1), repeat=self.dim)]

    def ancestor(self, level: int) -> Cube:
        if level > self.level:
            raise DomainError("ancestor level exceeds cube level")
        shift = self.level - level
        return Cube(level, tuple(i >> shift for i in self.index))

    def contains(self, other: Cube) -> bool:
        """True when ``other`` is a (non-strict) subcube."""
        return other.level >= self.level and other.ancestor(self.level) == self

    def key(self) -> str:
        return f"{self.level}:" + ",".join(str(i) for i in self.index)

    @classmethod
    def from_key(cls, key: str) -> Cube:
        level, idx = key.split(":")
        return cls(int(level), tuple(int(i) for i in idx.split(",")))

    def __repr__(self):
        return f"Cube({self.key()})"


@dataclass(frozen=True)
class HaarIndex:
    """Bit vector selecting the Haar type in each coordinate (1 = indicator)."""

    alpha: tuple[int, ...]

    def __post_init__(self):
        alpha = tuple(int(a) for a in np.atleast_1d(self.alpha))
        if any(a not in (0, 1) for a in alpha):
            raise DomainError(f"Haar index bits must be 0 or 1, got {alpha}")
        object.__setattr__(self, "alpha", alpha)

    @property
    def cancellative(self) -> bool:
        return not all(self.alpha)

    @classmethod
    def coerce(cls, value, dim: int) -> HaarIndex:
        if isinstance(value, HaarIndex):
            out = value
        elif np.isscalar(value):
            out = cls((int(value),) * dim)
        else:
            out = cls(tuple(value))
        if len(out.alpha) != dim:
            raise DomainError(f"Haar index {out.alpha} does not match dimension {dim}")
        return out

    def pattern(self) -> np.ndarray:
        """Sign pattern on the ``2^n`` children, shaped ``(2,)*n``."""
        out = np.ones((2,) * len(self.alpha))
        for axis, a in enumerate(self.alpha):
            if a == 0:
                shape = [1] * len(self.alpha)
                shape[axis] = 2
                out = out * np.array([1.0, -1.0]).reshape(shape)
        return out


@dataclass(frozen=True)
class DyadicGrid:
    """Finite dyadic grid of ``depth`` levels on the unit torus of dimension ``dim``."""

    dim: int
    depth: int
    shift: tuple[float, ...] = ()

    def __post_init__(self):
        if self.dim < 1 or self.depth < 0:
            raise DomainError("grid needs dim >= 1 and depth >= 0")
        shift = tuple(float(s) for s in self.shift) or (0.0,) * self.dim
        if len(shift) != self.dim:
            raise DomainError("shift length must equal dim")
        cells = [s * 2**self.depth for s in shift]
        if any(abs(c - round(c)) > 1e-9 or not 0 <= s < 1 for c, s in zip(cells, shift)):
            raise DomainError("shift entries must be multiples of 2^-depth in [0, 1)")
        object.__setattr__(self, "shift", shift)

    @property
    def side(self) -> int:
        return 2**self.depth

    @property
    def n_leaves(self) -> int:
        return 2 ** (self.dim * self.depth)

    @property
    def leaf_measure(self) -> float:
        return 2.0 ** (-self.dim * self.depth)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.dim

    @property
    def shift_cells(self) -> tuple[int, ...]:
        return tuple(int(round(s * self.side)) for s in self.shift)

    @property
    def root(self) -> Cube:
        return Cube(0, (0,) * self.dim)

    def compatible(self, other: DyadicGrid) -> bool:
        return self.dim == other.dim and self.depth == other.depth

    def with_shift(self, shift: Sequence[float]) -> DyadicGrid:
        return DyadicGrid(self.dim, self.depth, tuple(shift))

    def check_cube(self, Q: Cube) -> Cube:
        if Q.dim != self.dim or Q.level > self.depth:
            raise DomainError(f"{Q!r} does not belong to a grid of dim {self.dim}, depth {self.depth}")
        return Q

    def cubes(self, level: int | None = None) -> Iterator[Cube]:
        levels = range(self.depth + 1) if level is None else [level]
        for k in levels:
            for idx in itertools.product(range(2**k), repeat=self.dim):
                yield Cube(k, idx)

    # -- local / absolute conversions ------------------------------------
    def to_local(self, values: np.ndarray) -> np.ndarray:
        arr = np.asarray(values).reshape(self.shape)
        if any(self.shift_cells):
            arr = np.roll(arr, [-c for c in self.shift_cells], axis=tuple(range(self.dim)))
        return arr

    def from_local(self, arr: np.ndarray) -> np.ndarray:
        arr = np.asarray(arr).reshape(self.shape)
        if any(self.shift_cells):
            arr = np.roll(arr, list(self.shift_cells), axis=tuple(range(self.dim)))
        return arr.reshape(-1)

    def block(self, Q: Cube) -> tuple[slice, ...]:
        """Slices of the local array covering the leaves of ``Q``."""
        self.check_cube(Q)
        w = 2 ** (self.depth - Q.level)
        return tuple(slice(i * w, (i + 1) * w) for i in Q.index)

    def leaf_mask(self, Q: Cube) -> np.ndarray:
        """Boolean mask of the leaves of ``Q`` in absolute leaf order."""
        local = np.zeros(self.shape, dtype=bool)
        local[self.block(Q)] = True
        return self.from_local(local)

    def leaf_cube(self, flat_index: int) -> Cube:
        """Leaf cube (in this grid's coordinates) holding the absolute leaf ``flat_index``."""
        idx = np.unravel_index(flat_index, self.shape)
        return Cube(self.depth, tuple((i - c) % self.side for i, c in zip(idx, self.shift_cells)))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "depth": self.depth, "shift": list(self.shift)}


# -- block / pyramid helpers on local arrays -------------------------------

def level_view(arr: np.ndarray, k: int) -> np.ndarray:
    """Reshape a local ``(2^d,)*n`` array to ``(2^k,)*n + (2^(n(d-k)),)``.

    The trailing axis enumerates the leaves of each level-``k`` cube.
    """
    n = arr.ndim
    d = int(round(np.log2(arr.shape[0])))
    s = 2 ** (d - k)
    split = arr.reshape(sum(((2**k, s) for _ in range(n)), ()))
    order = tuple(range(0, 2 * n, 2)) + tuple(range(1, 2 * n, 2))
    return split.transpose(order).reshape((2**k,) * n + (s**n,))


def split_children(arr: np.ndarray) -> np.ndarray:
    """View a level-``(k+1)`` array as ``(2^k, 2, 2^k, 2, ...)``."""
    n = arr.ndim
    return arr.reshape(sum(((s // 2, 2) for s in arr.shape), ()))


def _child_axes(n: int) -> tuple[int, ...]:
    return tuple(range(1, 2 * n, 2))


def coarsen(arr: np.ndarray) -> np.ndarray:
    """Average over the ``2^n`` children of each parent cell."""
    return split_children(arr).mean(axis=_child_axes(arr.ndim))


def upsample(arr: np.ndarray, times: int = 1) -> np.ndarray:
    r = 2**times
    for axis in range(arr.ndim):
        arr = arr.repeat(r, axis=axis)
    return arr


def pattern_view(pattern: np.ndarray) -> np.ndarray:
    """Broadcastable ``(1, 2, 1, 2, ...)`` form of a child sign pattern."""
    n = pattern.ndim
    return pattern.reshape(sum(((1, 2) for _ in range(n)), ()))


def expand_children(amps: np.ndarray, pattern: np.ndarray) -> np.ndarray:
    """Level-``k`` amplitudes times the child pattern, as a level-``(k+1)`` array."""
    n = amps.ndim
    parent = amps.reshape(sum(((s, 1) for s in amps.shape), ()))
    out = parent * pattern_view(pattern)
    return out.reshape(tuple(2 * s for s in amps.shape))


def pyramid(arr: np.ndarray) -> list[np.ndarray]:
    """Cube averages at every level of a local block, coarsest first."""
    levels = [arr]
    while levels[-1].shape[0] > 1:
        levels.append(coarsen(levels[-1]))
    return levels[::-1]


def haar_coefficients(avgs: list[np.ndarray], alpha: HaarIndex, level0: int = 0) -> list[np.ndarray]:
    """Coefficients ``<f, h_I^alpha>`` for every cube of a block, coarsest first.

    ``avgs`` is the output of :func:`pyramid` for a block whose root sits at
    absolute level ``level0``.  Cancellative indices give one array per
    non-leaf level; the indicator index also covers the leaves.
    """
    n = avgs[0].ndim
    out = []
    if alpha.cancellative:
        pat = pattern_view(alpha.pattern())
        for j in range(len(avgs) - 1):
            vol = 2.0 ** (-n * (level0 + j))
            s = (split_children(avgs[j + 1]) * pat).mean(axis=_child_axes(n))
            out.append(np.sqrt(vol) * s)
    else:
        for j, a in enumerate(avgs):
            out.append(np.sqrt(2.0 ** (-n * (level0 + j))) * a)
    return out


# -- GridFunction -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridFunction:
    """Piecewise-constant function on the leaves of a dyadic grid."""

    grid: DyadicGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, copy=True)
        if not np.iscomplexobj(vals):
            vals = vals.astype(float)
        vals = vals.reshape(-1)
        if vals.size != self.grid.n_leaves:
            raise DomainError(f"expected {self.grid.n_leaves} leaf values, got {vals.size}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    # construction
    @classmethod
    def constant(cls, grid: DyadicGrid, c) -> GridFunction:
        return cls(grid, np.full(grid.n_leaves, c))

    @classmethod
    def indicator(cls, grid: DyadicGrid, Q: Cube) -> GridFunction:
        return cls(grid, grid.leaf_mask(Q).astype(float))

    @classmethod
    def from_local(cls, grid: DyadicGrid, arr: np.ndarray) -> GridFunction:
        return cls(grid, grid.from_local(arr))

    @cached_property
    def local(self) -> np.ndarray:
        return self.grid.to_local(self.values)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def on(self, grid: DyadicGrid) -> GridFunction:
        """The same function viewed on a (possibly shifted) compatible grid."""
        if not self.grid.compatible(grid):
            raise DomainError("grids differ in dimension or depth")
        return GridFunction(grid, self.values)

    def restrict(self, Q: Cube) -> GridFunction:
        return GridFunction(self.grid, np.where(self.grid.leaf_mask(Q), self.values, 0))

    # algebra
    def _lift(self, other):
        if isinstance(other, GridFunction):
            if not self.grid.compatible(other.grid):
                raise DomainError("grids differ in dimension or depth")
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._lift(other))

    def __rsub__(self, other):
        return GridFunction(self.grid, self._lift(other) - self.values)

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return GridFunction(self.grid, self.values / self._lift(other))

    def __rtruediv__(self, other):
        return GridFunction(self.grid, self._lift(other) / self.values)

    def __pow__(self, q):
        return GridFunction(self.grid, self.values**q)

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __abs__(self):
        return GridFunction(self.grid, np.abs(self.values))

    def exp(self) -> GridFunction:
        return GridFunction(self.grid, np.exp(self.values))

    @property
    def real(self) -> GridFunction:
        return GridFunction(self.grid, self.values.real)

    def integral(self):
        return self.values.sum() * self.grid.leaf_measure

    def max_abs(self) -> float:
        return float(np.abs(self.values).max())

    # serialization
    def to_dict(self) -> dict:
        out = self.grid.to_dict()
        out["complex"] = self.is_complex
        if self.is_complex:
            out["values"] = [[float(v.real), float(v.imag)] for v in self.values]
        else:
            out["values"] = [float(v) for v in self.values]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> GridFunction:
        grid = DyadicGrid(int(data["dim"]), int(data["depth"]), tuple(data.get("shift", ())))
        vals = np.asarray(data["values"], dtype=float)
        if data.get("complex", False):
            vals = vals[:, 0] + 1j * vals[:, 1]
        return cls(grid, vals)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> GridFunction:
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- operations -------------------------------------------------------------

def average(f: GridFunction, Q: Cube):
    """Lebesgue average of ``f`` over ``Q``."""
    return f.local[f.grid.block(Q)].mean()


def cube_averages(f: GridFunction, level: int) -> np.ndarray:
    """Averages over all cubes of one level, as a ``(2^level,)*n`` local array."""
    return level_view(f.local, level).mean(axis=-1)


def haar_function(grid: DyadicGrid, Q: Cube, alpha) -> GridFunction:
    """L^2-normalized Haar function ``h_Q^alpha``."""
    grid.check_cube(Q)
    alpha = HaarIndex.coerce(alpha, grid.dim)
    local = np.zeros(grid.shape)
    if alpha.cancellative:
        if Q.level >= grid.depth:
            raise ResolutionError(f"cancellative Haar function needs children, {Q!r} is a leaf")
        block = upsample(alpha.pattern(), grid.depth - Q.level - 1)
    else:
        block = 1.0
    local[grid.block(Q)] = block / np.sqrt(Q.measure)
    return GridFunction.from_local(grid, local)


def haar_coefficient(f: GridFunction, Q: Cube, alpha):
    """``<f, h_Q^alpha>`` by exact quadrature over the leaves."""
    h = haar_function(f.grid, Q, alpha)
    return (f.values * h.values).sum() * f.grid.leaf_measure


def _check_weight(nu: GridFunction | None, grid: DyadicGrid) -> np.ndarray:
    if nu is None:
        return np.ones(grid.n_leaves)
    vals = np.asarray(nu.values)
    if np.iscomplexobj(vals) or np.any(vals <= 0):
        raise DomainError("weights must be strictly positive")
    return vals


def lp_norm(f: GridFunction, p: float, nu: GridFunction | None = None) -> float:
    """``(sum |f|^p nu dx)^(1/p)``; a quasi-norm when ``p < 1``."""
    if p <= 0:
        raise DomainError("p must be positive")
    w = _check_weight(nu, f.grid)
    s = (np.abs(f.values) ** p * w).sum() * f.grid.leaf_measure
    return float(s ** (1.0 / p))


def weak_lp_norm(f: GridFunction, q: float, nu: GridFunction | None = None) -> float:
    """``sup_t t * nu({|f| > t})^(1/q)``, exact over the distinct leaf levels."""
    if q <= 0:
        raise DomainError("q must be positive")
    w = _check_weight(nu, f.grid) * f.grid.leaf_measure
    a = np.abs(f.values)
    order = np.argsort(-a, kind="stable")
    a, w = a[order], w[order]
    # the sup is approached as t increases to a distinct value v, with mass of {|f| >= v}
    mass = np.cumsum(w)
    last = np.r_[a[1:] != a[:-1], True]
    vals = a[last] * mass[last] ** (1.0 / q)
    return float(vals.max()) if vals.size else 0.0


def dyadic_maximal(f: GridFunction) -> GridFunction:
    """Dyadic maximal function ``sup_{Q containing x} <|f|>_Q``."""
    avgs = pyramid(np.abs(f.local))
    m = avgs[0]
    for a in avgs[1:]:
        m = np.maximum(upsample(m), a)
    return GridFunction.from_local(f.grid, m)


def parseval_error(f: GridFunction) -> float:
    """``| sum of squared Haar coefficients + mean^2 - ||f||_2^2 |``."""
    avgs = pyramid(f.local)
    n = f.grid.dim
    total = abs(avgs[0].item()) ** 2
    for bits in itertools.product((0, 1), repeat=n):
        alpha = HaarIndex(bits)
        if alpha.cancellative:
            total += sum((np.abs(c) ** 2).sum() for c in haar_coefficients(avgs, alpha))
    return abs(total - lp_norm(f, 2) ** 2)


def cancellative_indices(dim: int) -> list[HaarIndex]:
    return [HaarIndex(b) for b in itertools.product((0, 1), repeat=dim) if not all(b)]
