"""Multilinear Haar multipliers, paraproducts and their commutators.

Both dyadic operator families share one engine.  Every term of the defining
sum is ``a_I h_I^out`` with an amplitude

    a_I = w_I * prod_j <f_j, h_I^{alpha_j}> * |I|^(-s),

where ``w_I = eps_I`` and ``s = (m-1)/2`` for a Haar multiplier, and
``w_I = eps_I <g, h_I^{alpha_1}>`` and ``s = m/2`` for a paraproduct.  Terms
live on cubes of levels ``0..depth-1``; cancellative Haar functions need
children, so leaf cubes never contribute.

Amplitudes come from one averaging pass per input and the output is
synthesized top-down, level by level, so evaluation is linear in the number
of leaves.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

from .dyadic import (
    Cube,
    DomainError,
    DyadicGrid,
    GridFunction,
    HaarIndex,
    average,
    expand_children,
    haar_coefficient,
    haar_coefficients,
    haar_function,
    pyramid,
    upsample,
)
from .weights import bmo_norm


# -- coefficient maps -------------------------------------------------------

def epsilon_from_map(grid: DyadicGrid, mapping: Mapping[Cube, complex] | Callable[[Cube], complex],
                     default: float = 0.0) -> list[np.ndarray]:
    """Per-level local arrays of ``eps_I`` for the cubes of levels ``0..depth-1``."""
    out = []
    for k in range(grid.depth):
        arr = np.full((2**k,) * grid.dim, default, dtype=complex)
        for Q in grid.cubes(k):
            if callable(mapping):
                arr[Q.index] = mapping(Q)
            elif Q in mapping:
                arr[Q.index] = mapping[Q]
        out.append(arr.real.copy() if np.all(arr.imag == 0) else arr)
    return out


def constant_epsilon(grid: DyadicGrid, c: float = 1.0) -> list[np.ndarray]:
    return [np.full((2**k,) * grid.dim, float(c)) for k in range(grid.depth)]


def random_sign_epsilon(grid: DyadicGrid, rng: np.random.Generator) -> list[np.ndarray]:
    """Independent uniform signs; the default coefficient sequence."""
    return [rng.choice([-1.0, 1.0], size=(2**k,) * grid.dim) for k in range(grid.depth)]


def epsilon_to_keys(eps: list[np.ndarray]) -> dict[str, float]:
    out = {}
    for k, arr in enumerate(eps):
        for idx in itertools.product(range(2**k), repeat=arr.ndim):
            v = arr[idx]
            if v != 0:
                out[Cube(k, idx).key()] = float(np.real(v)) if np.isreal(v) else [float(v.real), float(v.imag)]
    return out


def epsilon_from_keys(grid: DyadicGrid, keys: Mapping[str, object]) -> list[np.ndarray]:
    mapping = {}
    for key, v in keys.items():
        mapping[Cube.from_key(key)] = complex(v[0], v[1]) if isinstance(v, (list, tuple)) else float(v)
    return epsilon_from_map(grid, mapping)


def _slice_level(arr: np.ndarray, Q: Cube, j: int) -> np.ndarray:
    """Sub-array of a level-``(Q.level + j)`` array covering the cubes inside ``Q``."""
    w = 2**j
    return arr[tuple(slice(i * w, (i + 1) * w) for i in Q.index)]


# -- the shared engine ------------------------------------------------------

class DyadicOperator:
    """Base class of the m-linear dyadic operators; see the module docstring."""

    grid: DyadicGrid
    epsilon: list
    m: int

    @property
    def arity(self) -> int:
        return self.m

    # subclasses provide these
    in_alphas: tuple[HaarIndex, ...]
    out_alpha: HaarIndex
    scale: float

    @cached_property
    def cube_weights(self) -> list[np.ndarray]:
        return [np.asarray(e) for e in self.epsilon]

    def _check_inputs(self, fs: Sequence[GridFunction]) -> None:
        if len(fs) != self.m:
            raise DomainError(f"operator takes {self.m} inputs, got {len(fs)}")
        for f in fs:
            if not f.grid.compatible(self.grid):
                raise DomainError("input lives on an incompatible grid")

    def block_amplitudes(self, blocks: Sequence[np.ndarray], Q: Cube) -> list[np.ndarray]:
        """Amplitudes ``a_I`` for the cubes ``I`` inside ``Q`` that carry terms.

        ``blocks`` are the local input arrays restricted to ``Q``.  Entry ``j``
        holds the cubes of level ``Q.level + j``.
        """
        n = self.grid.dim
        nlev = self.grid.depth - Q.level
        amps = [_slice_level(self.cube_weights[Q.level + j], Q, j).astype(
            np.result_type(self.cube_weights[Q.level + j], *blocks)) for j in range(nlev)]
        for block, alpha in zip(blocks, self.in_alphas):
            coefs = haar_coefficients(pyramid(block), alpha, Q.level)
            for j in range(nlev):
                amps[j] = amps[j] * coefs[j]
        for j in range(nlev):
            amps[j] = amps[j] * 2.0 ** (n * (Q.level + j) * self.scale)
        return amps

    def synthesize(self, amps: list[np.ndarray], Q: Cube, mode: str = "sum") -> np.ndarray:
        """Build the block output of ``sum_I a_I h_I^out`` over the block of ``Q``.

        ``mode="sum"`` returns the full sum; ``mode="max"`` returns the running
        maximum of ``|partial sums|`` taken top-down through the levels, which
        is the maximal truncation of the block operator.
        """
        n = self.grid.dim
        pat = self.out_alpha.pattern()
        d = self.grid.depth - Q.level
        dtype = np.result_type(*amps) if amps else float
        s = np.zeros((1,) * n, dtype=dtype)
        mx = np.zeros((1,) * n)
        for j, a in enumerate(amps):
            norm = 2.0 ** (n * (Q.level + j) / 2)
            s = upsample(s) + expand_children(a * norm, pat)
            if mode == "max":
                mx = np.maximum(upsample(mx), np.abs(s))
        if not amps:
            s = np.zeros((2**d,) * n, dtype=dtype)
            mx = np.zeros((2**d,) * n)
        return mx if mode == "max" else s

    def evaluate_block(self, blocks: Sequence[np.ndarray], Q: Cube, mode: str = "sum") -> np.ndarray:
        """Operator localized to ``Q`` (only terms on cubes inside ``Q``)."""
        return self.synthesize(self.block_amplitudes(blocks, Q), Q, mode)

    def __call__(self, *fs: GridFunction) -> GridFunction:
        self._check_inputs(fs)
        root = self.grid.root
        out = self.evaluate_block([f.local for f in fs], root)
        return GridFunction.from_local(self.grid, out)

    # pieces the naive path needs
    def term_weight(self, Q: Cube):
        return self.cube_weights[Q.level][Q.index]

    def naive(self, *fs: GridFunction) -> GridFunction:
        """Direct per-cube summation with explicit Haar functions."""
        self._check_inputs(fs)
        n = self.grid.dim
        acc = np.zeros(self.grid.n_leaves, dtype=complex if any(f.is_complex for f in fs) else float)
        for k in range(self.grid.depth):
            for Q in self.grid.cubes(k):
                w = self.term_weight(Q)
                if w == 0:
                    continue
                c = w
                for f, alpha in zip(fs, self.in_alphas):
                    c = c * haar_coefficient(f, Q, alpha)
                if c == 0:
                    continue
                acc = acc + c * Q.measure ** (-self.scale) * haar_function(self.grid, Q, self.out_alpha).values
        if not np.iscomplexobj(self.cube_weights[0]) and not any(f.is_complex for f in fs):
            acc = np.real(acc)
        return GridFunction(self.grid, acc)


def _coerce_alphas(alphas, dim: int) -> tuple[HaarIndex, ...]:
    return tuple(HaarIndex.coerce(a, dim) for a in alphas)


@dataclass(frozen=True, eq=False)
class HaarMultiplierSpec(DyadicOperator):
    """``sum_I eps_I <f_1,h_I^a1>...<f_m,h_I^am> h_I^a(m+1) |I|^(-(m-1)/2)``."""

    grid: DyadicGrid
    epsilon: list = field(repr=False)
    alphas: tuple = ()

    def __post_init__(self):
        alphas = _coerce_alphas(self.alphas, self.grid.dim)
        object.__setattr__(self, "alphas", alphas)
        if len(alphas) < 2:
            raise DomainError("a Haar multiplier needs at least one input and one output index")
        if sum(a.cancellative for a in alphas) < 2:
            raise DomainError("at least two Haar indices must be cancellative")
        _check_epsilon(self.grid, self.epsilon)

    @property
    def m(self) -> int:
        return len(self.alphas) - 1

    @property
    def in_alphas(self):
        return self.alphas[:-1]

    @property
    def out_alpha(self):
        return self.alphas[-1]

    @property
    def scale(self) -> float:
        return (self.m - 1) / 2

    @property
    def sup_epsilon(self) -> float:
        return max(float(np.abs(e).max()) for e in self.epsilon) if self.epsilon else 0.0

    def to_dict(self) -> dict:
        return {"kind": "haar_multiplier", **self.grid.to_dict(), "m": self.m,
                "alphas": [list(a.alpha) for a in self.alphas],
                "epsilon": epsilon_to_keys(self.epsilon)}


@dataclass(frozen=True, eq=False)
class ParaproductSpec(DyadicOperator):
    """``sum_I eps_I <g,h_I^a1> prod_j <f_j,h_I^a(j+1)> h_I^a(m+2) |I|^(-m/2)``.

    ``strict=False`` drops the requirement that an input or output index be
    cancellative, which admits the classical ``sum <g,h_I> <f>_I h_I^1`` shape.
    """

    grid: DyadicGrid
    symbol: GridFunction = field(repr=False)
    epsilon: list = field(repr=False)
    alphas: tuple = ()
    strict: bool = True

    def __post_init__(self):
        alphas = _coerce_alphas(self.alphas, self.grid.dim)
        object.__setattr__(self, "alphas", alphas)
        if len(alphas) < 3:
            raise DomainError("a paraproduct needs a symbol index, inputs and an output index")
        if not alphas[0].cancellative:
            raise DomainError("the symbol Haar index must be cancellative")
        if self.strict and not any(a.cancellative for a in alphas[1:]):
            raise DomainError("one of the input/output Haar indices must be cancellative")
        if not self.symbol.grid.compatible(self.grid):
            raise DomainError("symbol lives on an incompatible grid")
        _check_epsilon(self.grid, self.epsilon)

    @property
    def m(self) -> int:
        return len(self.alphas) - 2

    @property
    def in_alphas(self):
        return self.alphas[1:-1]

    @property
    def out_alpha(self):
        return self.alphas[-1]

    @property
    def scale(self) -> float:
        return self.m / 2

    @cached_property
    def symbol_bmo(self) -> float:
        return bmo_norm(self.symbol.on(self.grid))

    @cached_property
    def cube_weights(self) -> list[np.ndarray]:
        g = self.symbol.on(self.grid)
        coefs = haar_coefficients(pyramid(g.local), self.alphas[0])
        return [np.asarray(e) * c for e, c in zip(self.epsilon, coefs)]

    def to_dict(self) -> dict:
        return {"kind": "paraproduct", **self.grid.to_dict(), "m": self.m,
                "alphas": [list(a.alpha) for a in self.alphas],
                "epsilon": epsilon_to_keys(self.epsilon), "symbol": self.symbol.to_dict(),
                "strict": self.strict}


def _check_epsilon(grid: DyadicGrid, eps) -> None:
    if len(eps) != grid.depth:
        raise DomainError("epsilon needs one array per non-leaf level")
    for k, e in enumerate(eps):
        if np.shape(e) != (2**k,) * grid.dim:
            raise DomainError(f"epsilon level {k} has shape {np.shape(e)}")
        if not np.all(np.isfinite(e)):
            raise DomainError("epsilon must be bounded")


def apply_haar_multiplier(spec: HaarMultiplierSpec, fs: Sequence[GridFunction]) -> GridFunction:
    return spec(*fs)


def apply_paraproduct(spec: ParaproductSpec, fs: Sequence[GridFunction]) -> GridFunction:
    return spec(*fs)


def truncated_tail(spec: DyadicOperator, J: Cube, fs: Sequence[GridFunction]) -> GridFunction:
    """``T^J f``: the defining sum over the cubes strictly containing ``J``."""
    spec._check_inputs(fs)
    spec.grid.check_cube(J)
    root = spec.grid.root
    amps = spec.block_amplitudes([f.local for f in fs], root)
    for k, a in enumerate(amps):
        keep = np.zeros(a.shape, dtype=bool)
        if k < J.level:
            keep[J.ancestor(k).index] = True
        amps[k] = np.where(keep, a, 0)
    return GridFunction.from_local(spec.grid, spec.synthesize(amps, root))


def maximal_truncation(spec: DyadicOperator, fs: Sequence[GridFunction],
                       method: str = "auto") -> GridFunction:
    """``T_# f = sup_J |T^J f|``.

    For a point ``x`` the tails ``T^J f(x)`` are exactly the top-down partial
    sums of the series at ``x``, so ``method="direct"`` takes their running
    maximum.  With a cancellative output index the partial sum through level
    ``k`` equals ``<T f>`` over the level-``(k+1)`` cube containing ``x``;
    ``method="average"`` uses that identity.  ``"auto"`` picks ``"average"``
    exactly when the output index is cancellative.
    """
    spec._check_inputs(fs)
    if method == "auto":
        method = "average" if spec.out_alpha.cancellative else "direct"
    if method == "direct":
        out = spec.evaluate_block([f.local for f in fs], spec.grid.root, mode="max")
        return GridFunction.from_local(spec.grid, out)
    if method != "average":
        raise DomainError(f"unknown method {method!r}")
    if not spec.out_alpha.cancellative:
        raise DomainError("the averaging identity needs a cancellative output index")
    avgs = pyramid(spec(*fs).local)
    mx = np.zeros((1,) * spec.grid.dim)
    for a in avgs[1:]:
        mx = np.maximum(upsample(mx), np.abs(a))
    return GridFunction.from_local(spec.grid, mx)


# -- generic operators and commutators --------------------------------------

class MultilinearOperator:
    """Callable m-linear operator on grid functions."""

    arity: int

    def __call__(self, *fs: GridFunction) -> GridFunction:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Operator(MultilinearOperator):
    """Wrap a plain function of ``arity`` grid functions."""

    fn: Callable[..., GridFunction]
    arity: int

    def __call__(self, *fs):
        if len(fs) != self.arity:
            raise DomainError(f"operator takes {self.arity} inputs, got {len(fs)}")
        return self.fn(*fs)


def arity_of(T) -> int:
    return T.arity


@dataclass(frozen=True, eq=False)
class Commutator(MultilinearOperator):
    """``[b, T]_beta f = b T(f) - T(..., b f_beta, ...)`` with a 1-based slot."""

    base: object
    symbol: GridFunction
    beta: int

    def __post_init__(self):
        if not 1 <= self.beta <= arity_of(self.base):
            raise DomainError(f"slot {self.beta} out of range 1..{arity_of(self.base)}")

    @property
    def arity(self) -> int:
        return arity_of(self.base)

    def __call__(self, *fs):
        if len(fs) != self.arity:
            raise DomainError(f"operator takes {self.arity} inputs, got {len(fs)}")
        moved = list(fs)
        moved[self.beta - 1] = self.symbol * fs[self.beta - 1]
        return self.symbol * self.base(*fs) - self.base(*moved)


def commutator_single(T, b: GridFunction, beta: int) -> Commutator:
    return Commutator(T, b, beta)


@dataclass(frozen=True, eq=False)
class CommutatorSpec:
    """Iterated commutator of ``base`` with ``orders[j]`` symbols in slot ``j + 1``."""

    base: object
    orders: tuple[int, ...]
    symbols: tuple[tuple[GridFunction, ...], ...]

    def __post_init__(self):
        orders = tuple(int(k) for k in self.orders)
        symbols = tuple(tuple(s) for s in self.symbols)
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "symbols", symbols)
        m = arity_of(self.base)
        if len(orders) != m or len(symbols) != m:
            raise DomainError("orders and symbols need one entry per slot")
        for k, syms in zip(orders, symbols):
            if k < 0 or len(syms) != k:
                raise DomainError(f"slot order {k} does not match {len(syms)} symbols")
            for b in syms:
                if b.is_complex:
                    raise DomainError("commutator symbols are real")

    @property
    def total_order(self) -> int:
        return sum(self.orders)

    def flat_symbols(self) -> list[tuple[int, GridFunction]]:
        """``(slot, symbol)`` pairs in nesting order, innermost first."""
        return [(j + 1, b) for j, syms in enumerate(self.symbols) for b in syms]

    def to_dict(self) -> dict:
        return {"kind": "commutator", "base": self.base.to_dict(), "orders": list(self.orders),
                "symbols": [[b.to_dict() for b in syms] for syms in self.symbols]}


def build_iterated_commutator(spec: CommutatorSpec):
    """Nest single commutators slot by slot: slot 1 innermost, slot m outermost."""
    op = spec.base
    for slot, b in spec.flat_symbols():
        op = Commutator(op, b, slot)
    return op


def first_order_commutator(T, symbols: Mapping[int, GridFunction]):
    """``[b_i1, ..., [b_il, T]_il ...]_i1`` for symbols keyed by 1-based slot."""
    m = arity_of(T)
    orders = [1 if j in symbols else 0 for j in range(1, m + 1)]
    syms = [(symbols[j],) if j in symbols else () for j in range(1, m + 1)]
    return build_iterated_commutator(CommutatorSpec(T, tuple(orders), tuple(syms)))


def expand_first_order(T, symbols: Mapping[int, GridFunction], fs: Sequence[GridFunction],
                       centers: Mapping[int, complex] | None = None) -> GridFunction:
    """Evaluate a first-order commutator through its alternating subset expansion.

    ``sum_A (-1)^|A| prod_{i not in A} (b_i - c_i) T(g^A)`` where ``g^A``
    multiplies ``b_i - c_i`` into slot ``i`` for ``i`` in ``A``.  The result does
    not depend on the constants ``c_i``.
    """
    slots = sorted(symbols)
    centers = centers or {}
    shifted = {i: symbols[i] - centers.get(i, 0.0) for i in slots}
    total = None
    for r in range(len(slots) + 1):
        for A in itertools.combinations(slots, r):
            args = list(fs)
            factor = GridFunction.constant(fs[0].grid, (-1.0) ** r)
            for i in slots:
                if i in A:
                    args[i - 1] = shifted[i] * args[i - 1]
                else:
                    factor = factor * shifted[i]
            term = factor * T(*args)
            total = term if total is None else total + term
    return total


# -- conjugated family -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MultiplicationOperator:
    """``M^beta_h``: multiply slot ``beta`` (1-based) by ``h``."""

    h: GridFunction
    beta: int

    def __call__(self, fs: Sequence[GridFunction]) -> list[GridFunction]:
        out = list(fs)
        out[self.beta - 1] = self.h * out[self.beta - 1]
        return out


def conjugated_family(spec: CommutatorSpec, zs: Sequence[Sequence[complex]],
                      fs: Sequence[GridFunction]) -> GridFunction:
    """``F(z) f = exp(sum b z) T(exp(-sum_i b_1^i z_1^i) f_1, ..., exp(-...) f_m)``.

    ``zs[j]`` holds one complex number per symbol of slot ``j + 1``.
    """
    m = arity_of(spec.base)
    if len(zs) != m or any(len(z) != k for z, k in zip(zs, spec.orders)):
        raise DomainError("one z per symbol is required")
    grid = fs[0].grid
    phases = []
    for syms, z in zip(spec.symbols, zs):
        acc = np.zeros(grid.n_leaves, dtype=complex)
        for b, zi in zip(syms, z):
            acc = acc + b.values * complex(zi)
        phases.append(acc)
    args = list(fs)
    for j in range(m):
        args = MultiplicationOperator(GridFunction(grid, np.exp(-phases[j])), j + 1)(args)
    out = GridFunction(grid, np.exp(sum(phases))) * spec.base(*args)
    if all(complex(zi).imag == 0 for z in zs for zi in z) and not any(f.is_complex for f in fs):
        out = out.real
    return out


# -- serialization ----------------------------------------------------------

def operator_from_dict(data: dict, base=None):
    """Rebuild an operator from its tagged JSON form."""
    from .weights import load_gridfunction_ref

    kind = data.get("kind")
    if kind == "commutator":
        inner = operator_from_dict(data["base"], base)
        syms = tuple(tuple(load_gridfunction_ref(b, base) for b in s) for s in data["symbols"])
        return CommutatorSpec(inner, tuple(data["orders"]), syms)
    grid = DyadicGrid(int(data["dim"]), int(data["depth"]), tuple(data.get("shift", ())))
    eps = epsilon_from_keys(grid, data.get("epsilon", {}))
    if kind == "haar_multiplier":
        return HaarMultiplierSpec(grid, eps, tuple(data["alphas"]))
    if kind == "paraproduct":
        return ParaproductSpec(grid, load_gridfunction_ref(data["symbol"], base), eps, tuple(data["alphas"]),
                               bool(data.get("strict", True)))
    raise DomainError(f"unknown operator kind {kind!r}")


def operator_to_dict(spec) -> dict:
    return spec.to_dict()


def single_term_value(spec: DyadicOperator, Q: Cube, fs: Sequence[GridFunction]) -> GridFunction:
    """One term ``a_Q h_Q^out`` of the defining sum, for hand checks."""
    c = spec.term_weight(Q)
    for f, alpha in zip(fs, spec.in_alphas):
        c = c * haar_coefficient(f, Q, alpha)
    return c * Q.measure ** (-spec.scale) * haar_function(spec.grid, Q, spec.out_alpha)


__all__ = [
    "HaarMultiplierSpec", "ParaproductSpec", "CommutatorSpec", "Commutator", "Operator",
    "MultiplicationOperator", "apply_haar_multiplier", "apply_paraproduct", "commutator_single",
    "build_iterated_commutator", "first_order_commutator", "expand_first_order",
    "truncated_tail", "maximal_truncation", "conjugated_family", "epsilon_from_map",
    "constant_epsilon", "random_sign_epsilon", "operator_from_dict", "operator_to_dict",
    "average",
]
