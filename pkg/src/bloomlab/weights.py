"""Muckenhoupt characteristics, Bloom data and weighted BMO on a dyadic grid.

Suprema over cubes are maxima over every cube of the finite grid, leaves
included.  Characteristics are accumulated in log space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dyadic import DomainError, GridFunction, level_view


@dataclass(frozen=True)
class ExponentVector:
    """Exponents ``(p_1, ..., p_m)`` with ``1 < p_j < inf``."""

    p_list: tuple[float, ...]

    def __post_init__(self):
        p_list = tuple(float(p) for p in self.p_list)
        if not p_list or any(not 1 < p < np.inf for p in p_list):
            raise DomainError(f"exponents must lie in (1, inf), got {p_list}")
        object.__setattr__(self, "p_list", p_list)

    @property
    def m(self) -> int:
        return len(self.p_list)

    @property
    def p(self) -> float:
        return 1.0 / sum(1.0 / q for q in self.p_list)

    @property
    def duals(self) -> tuple[float, ...]:
        return tuple(q / (q - 1) for q in self.p_list)

    def dual_vector(self) -> ExponentVector:
        return ExponentVector(self.duals)

    def sub(self, slots: Sequence[int]) -> ExponentVector:
        """Exponents of the given 1-based slots."""
        return ExponentVector(tuple(self.p_list[j - 1] for j in slots))


def dual_exponent(p: float) -> float:
    return p / (p - 1)


@dataclass(frozen=True)
class WeightVector:
    weights: tuple[GridFunction, ...]
    exponents: ExponentVector

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        if len(self.weights) != self.exponents.m:
            raise DomainError("one weight per exponent is required")
        for w in self.weights:
            if np.iscomplexobj(w.values) or np.any(w.values <= 0):
                raise DomainError("weights must be strictly positive")

    @property
    def m(self) -> int:
        return self.exponents.m


def _positive(w: GridFunction) -> np.ndarray:
    if np.iscomplexobj(w.values) or np.any(w.values <= 0):
        raise DomainError("weight must be strictly positive")
    return w.local


def log_cube_averages(arr: np.ndarray) -> list[np.ndarray]:
    """``log <arr>_Q`` for every cube of every level, coarsest first."""
    d = int(round(np.log2(arr.shape[0])))
    return [np.log(level_view(arr, k).mean(axis=-1)) for k in range(d + 1)]


def _max_over_levels(terms: list[np.ndarray]) -> float:
    return max(float(t.max()) for t in terms)


def ap_characteristic(w: GridFunction, p: float) -> float:
    """``[w]_{A_p}``: max over dyadic cubes of ``<w> <w^(1-p')>^(p-1)``."""
    if p <= 1:
        raise DomainError("A_p needs p > 1")
    arr = _positive(w)
    pp = dual_exponent(p)
    la = log_cube_averages(arr)
    ld = log_cube_averages(arr ** (1 - pp))
    return float(np.exp(_max_over_levels([a + (p - 1) * b for a, b in zip(la, ld)])))


def weight_product(wv: WeightVector) -> GridFunction:
    """``nu_w = prod_j w_j^(p/p_j)``."""
    p = wv.exponents.p
    logv = sum((p / pj) * np.log(w.values) for w, pj in zip(wv.weights, wv.exponents.p_list))
    return GridFunction(wv.weights[0].grid, np.exp(logv))


def multilinear_ap_characteristic(wv: WeightVector) -> float:
    """``[w]_{A_p}`` for a weight vector, ``(sup <nu>^(1/p) prod <w_j^(1-p_j')>^(1/p_j'))^p``."""
    ex = wv.exponents
    p = ex.p
    total = [x / p for x in log_cube_averages(weight_product(wv).local)]
    for w, pj in zip(wv.weights, ex.p_list):
        pp = dual_exponent(pj)
        for k, x in enumerate(log_cube_averages(w.local ** (1 - pp))):
            total[k] = total[k] + x / pp
    return float(np.exp(p * _max_over_levels(total)))


def dual_weight(w: GridFunction, p: float) -> GridFunction:
    """``w^(1-p')``."""
    _positive(w)
    return GridFunction(w.grid, w.values ** (1 - dual_exponent(p)))


def dual_weight_vector(wv: WeightVector) -> WeightVector:
    ex = wv.exponents
    return WeightVector(tuple(dual_weight(w, p) for w, p in zip(wv.weights, ex.p_list)),
                        ex.dual_vector())


def cube_oscillations(b: GridFunction, level: int) -> np.ndarray:
    """``int_Q |b - <b>_Q|`` for every cube of one level."""
    v = level_view(b.local, level)
    mean = v.mean(axis=-1, keepdims=True)
    return np.abs(v - mean).sum(axis=-1) * b.grid.leaf_measure


def weighted_bmo_norm(b: GridFunction, nu: GridFunction | None = None) -> float:
    """``sup_Q nu(Q)^-1 int_Q |b - <b>_Q|``; dyadic BMO when ``nu`` is omitted."""
    if np.iscomplexobj(b.values):
        raise DomainError("BMO symbols are real")
    best = 0.0
    for k in range(b.grid.depth + 1):
        osc = cube_oscillations(b, k)
        if nu is None:
            mass = 2.0 ** (-b.grid.dim * k)
        else:
            mass = level_view(_positive(nu), k).sum(axis=-1) * b.grid.leaf_measure
        best = max(best, float((osc / mass).max()))
    return best


def bmo_norm(b: GridFunction) -> float:
    return weighted_bmo_norm(b, None)


def conjugate_weight(w: GridFunction, b: GridFunction, z: complex, p: float = 1.0) -> GridFunction:
    """``exp(p Re(b z)) w``."""
    _positive(w)
    if np.iscomplexobj(b.values):
        raise DomainError("BMO symbols are real")
    return GridFunction(w.grid, np.exp(p * np.real(b.values * z)) * w.values)


def john_nirenberg_check(b: GridFunction) -> tuple[float, float]:
    """Dyadic BMO norm and ``max_Q <exp|b - <b>_Q|>_Q``."""
    worst = 1.0
    for k in range(b.grid.depth + 1):
        v = level_view(b.local, k)
        dev = np.abs(v - v.mean(axis=-1, keepdims=True))
        worst = max(worst, float(np.exp(dev).mean(axis=-1).max()))
    return bmo_norm(b), worst


def reverse_holder_exponent(w: GridFunction, constant: float = 2.0,
                            q_max: float = 64.0, tol: float = 1e-6) -> float:
    """Largest ``q`` in ``[1, q_max]`` with ``max_Q <w^q>^(1/q) / <w> <= constant``.

    The power mean is nondecreasing in ``q``, so bisection applies.
    """
    arr = _positive(w)
    la = log_cube_averages(arr)

    def worst(q):
        lq = log_cube_averages(arr**q)
        return np.exp(_max_over_levels([x / q - a for x, a in zip(lq, la)]))

    if worst(q_max) <= constant:
        return q_max
    lo, hi = 1.0, q_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if worst(mid) <= constant:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class BloomSetup:
    """Two weight vectors that agree outside the commuted slots ``I`` (1-based)."""

    exponents: ExponentVector
    commuted: tuple[int, ...]
    mu: WeightVector
    lam: WeightVector

    def __post_init__(self):
        commuted = tuple(sorted(int(i) for i in self.commuted))
        m = self.exponents.m
        if len(set(commuted)) != len(commuted) or any(not 1 <= i <= m for i in commuted):
            raise DomainError(f"commuted slots must be distinct in 1..{m}")
        object.__setattr__(self, "commuted", commuted)
        for j in self.free_slots:
            if not np.allclose(self.mu.weights[j - 1].values, self.lam.weights[j - 1].values,
                               rtol=1e-12, atol=0):
                raise DomainError(f"mu and lambda must agree in uncommuted slot {j}")

    @property
    def m(self) -> int:
        return self.exponents.m

    @property
    def free_slots(self) -> tuple[int, ...]:
        return tuple(j for j in range(1, self.m + 1) if j not in self.commuted)

    def bloom_weight(self, slot: int) -> GridFunction:
        """``nu_i = (mu_i / lambda_i)^(1/p_i)`` for a commuted slot."""
        p = self.exponents.p_list[slot - 1]
        mu, lam = self.mu.weights[slot - 1], self.lam.weights[slot - 1]
        return GridFunction(mu.grid, (mu.values / lam.values) ** (1.0 / p))

    @property
    def bloom_weights(self) -> tuple[GridFunction, ...]:
        return tuple(self.bloom_weight(i) for i in self.commuted)

    @property
    def reduced_exponents(self) -> ExponentVector | None:
        return self.exponents.sub(self.free_slots) if self.free_slots else None

    @property
    def reduced_weights(self) -> WeightVector | None:
        if not self.free_slots:
            return None
        return WeightVector(tuple(self.mu.weights[j - 1] for j in self.free_slots),
                            self.reduced_exponents)

    def target_weight(self) -> GridFunction:
        """``nu_lambda``, the weight of the output space."""
        return weight_product(self.lam)

    def to_dict(self) -> dict:
        def enc(ws):
            return [w.to_dict() for w in ws]

        return {"p": list(self.exponents.p_list), "I": list(self.commuted),
                "mu": enc(self.mu.weights), "lambda": enc(self.lam.weights)}

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> BloomSetup:
        ex = ExponentVector(tuple(data["p"]))

        def dec(items):
            return tuple(load_gridfunction_ref(x, base) for x in items)

        return cls(ex, tuple(data.get("I", ())), WeightVector(dec(data["mu"]), ex),
                   WeightVector(dec(data["lambda"]), ex))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> BloomSetup:
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)


def load_gridfunction_ref(ref, base: Path | None = None) -> GridFunction:
    """A GridFunction given inline as a dict or as a path to its JSON file."""
    if isinstance(ref, GridFunction):
        return ref
    if isinstance(ref, dict):
        return GridFunction.from_dict(ref)
    path = Path(ref)
    if base is not None and not path.is_absolute():
        path = Path(base) / path
    return GridFunction.load(path)


def theorem_constant(setup: BloomSetup) -> float:
    """The weight constant of the first-order Bloom bound.

    Each commuted slot contributes ``[mu_i]^max(1, 1/(p_i-1))`` and
    ``[lambda_i]^(max(p_i, q, p'_1..p'_m)/p_i)``; the uncommuted block
    contributes ``[w]_{A_q}^(max(q, p'_1..p'_m)/q)``.  With every slot commuted
    that factor is 1 and ``p`` stands in for ``q``.
    """
    ex = setup.exponents
    duals = ex.duals
    reduced = setup.reduced_weights
    q = reduced.exponents.p if reduced is not None else ex.p
    log_c = 0.0
    for i in setup.commuted:
        pi = ex.p_list[i - 1]
        log_c += max(1.0, 1.0 / (pi - 1)) * np.log(ap_characteristic(setup.mu.weights[i - 1], pi))
        log_c += max(pi, q, *duals) / pi * np.log(ap_characteristic(setup.lam.weights[i - 1], pi))
    if reduced is not None:
        log_c += max(q, *duals) / q * np.log(multilinear_ap_characteristic(reduced))
    return float(np.exp(log_c))


def holder_combination(lams: Sequence[GridFunction], lam_exponents: Sequence[float],
                       wv: WeightVector) -> tuple[float, float]:
    """Both sides of the Hölder bound for a combined weight vector.

    Appending single weights ``lambda_s`` in ``A_{p_s}`` to ``wv`` gives a vector
    ``w1`` with exponents ``r = (p_s..., q...)``.  Returns
    ``([w1]_{A_r}, prod_s [lambda_s]^(r/p_s) * [wv]^(r/q))``; the first never
    exceeds the second.
    """
    if len(lams) != len(lam_exponents):
        raise DomainError("one exponent per appended weight is required")
    ex = ExponentVector(tuple(lam_exponents) + wv.exponents.p_list)
    combined = WeightVector(tuple(lams) + wv.weights, ex)
    r, q = ex.p, wv.exponents.p
    log_rhs = (r / q) * np.log(multilinear_ap_characteristic(wv))
    for lam, ps in zip(lams, lam_exponents):
        log_rhs += (r / ps) * np.log(ap_characteristic(lam, ps))
    return multilinear_ap_characteristic(combined), float(np.exp(log_rhs))
