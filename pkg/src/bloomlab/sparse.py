"""Sparse collections, stopping cubes and pointwise sparse domination of commutators."""

from __future__ import annotations

import base64
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dyadic import Cube, DomainError, DyadicGrid, GridFunction, pyramid, upsample
from .operators import DyadicOperator, first_order_commutator

SCHEMA = "bloomlab.certificate/1"


@dataclass
class SparseCollection:
    """Cubes with explicit witness sets ``E_Q`` (boolean masks in absolute leaf order)."""

    grid: DyadicGrid
    cubes: list[Cube]
    eta: float
    witness: dict[Cube, np.ndarray] = field(repr=False)
    provenance: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.cubes)

    def __iter__(self):
        return iter(self.cubes)

    def __contains__(self, Q):
        return Q in self.witness

    def realized_eta(self) -> float:
        if not self.cubes:
            return 1.0
        return min(self.witness[Q].sum() / 2 ** (self.grid.dim * (self.grid.depth - Q.level))
                   for Q in self.cubes)


@dataclass(frozen=True)
class SparsityCheck:
    ok: bool
    message: str = ""
    cubes: tuple[Cube, ...] = ()

    def __bool__(self):
        return self.ok


def canonical_witness(grid: DyadicGrid, cubes: Sequence[Cube]) -> dict[Cube, np.ndarray]:
    """``E_Q = Q`` minus every collection cube strictly inside ``Q``.

    Each leaf goes to the smallest collection cube containing it, so the sets
    are pairwise disjoint by construction.
    """
    cubes = sorted(set(cubes), key=lambda Q: (Q.level, Q.index))
    owner = np.full(grid.shape, -1)
    for t, Q in enumerate(cubes):
        owner[grid.block(Q)] = t
    owner = grid.from_local(owner)
    return {Q: owner == t for t, Q in enumerate(cubes)}


def make_collection(grid: DyadicGrid, cubes: Sequence[Cube], eta: float | None = None,
                    provenance: dict | None = None) -> SparseCollection:
    cubes = sorted(set(cubes), key=lambda Q: (Q.level, Q.index))
    S = SparseCollection(grid, cubes, 1.0, canonical_witness(grid, cubes), provenance or {})
    S.eta = S.realized_eta() if eta is None else eta
    return S


def verify_sparsity(S: SparseCollection, eta: float | None = None) -> SparsityCheck:
    """Check ``E_Q`` inside ``Q``, ``|E_Q| >= eta |Q|`` and pairwise disjointness."""
    eta = S.eta if eta is None else eta
    grid = S.grid
    owner = np.full(grid.n_leaves, -1)
    for t, Q in enumerate(S.cubes):
        E = np.asarray(S.witness.get(Q, np.zeros(grid.n_leaves, bool)), dtype=bool)
        if E.size != grid.n_leaves:
            return SparsityCheck(False, f"witness of {Q.key()} has wrong size", (Q,))
        if np.any(E & ~grid.leaf_mask(Q)):
            return SparsityCheck(False, f"witness of {Q.key()} leaves the cube", (Q,))
        n_in = 2 ** (grid.dim * (grid.depth - Q.level))
        if E.sum() < eta * n_in - 1e-9:
            return SparsityCheck(False, f"|E| = {E.sum()}/{n_in} leaves of {Q.key()} is below eta = {eta}", (Q,))
        clash = owner[E]
        clash = clash[clash >= 0]
        if clash.size:
            other = S.cubes[int(clash[0])]
            return SparsityCheck(False, f"witnesses of {other.key()} and {Q.key()} overlap", (other, Q))
        owner[E] = t
    return SparsityCheck(True)


def cz_stopping_cubes(grid: DyadicGrid, E: np.ndarray, Q0: Cube, level: float) -> list[Cube]:
    """Maximal dyadic ``P`` inside ``Q0`` with ``<chi_E>_P > level``."""
    if not 0 < level < 1:
        raise DomainError("the stopping level must lie in (0, 1)")
    E = np.asarray(E, dtype=bool)
    block = grid.to_local(E)[grid.block(Q0)].astype(float)
    return _stopping_in_block(pyramid(block), Q0, level)


def _stopping_in_block(avgs: list[np.ndarray], Q0: Cube, level: float, skip_top: bool = False) -> list[Cube]:
    n = avgs[0].ndim
    covered = np.zeros((1,) * n, dtype=bool)
    out = []
    for j, a in enumerate(avgs):
        if j > 0:
            covered = upsample(covered)
        if j == 0 and skip_top:
            continue
        hit = (a > level) & ~covered
        for idx in zip(*np.nonzero(hit)):
            out.append(Cube(Q0.level + j, tuple(q * 2**j + int(i) for q, i in zip(Q0.index, idx))))
        covered = covered | hit
    return out


def gamma_term(b: GridFunction, f: GridFunction, Q: Cube, gamma: int) -> GridFunction:
    """``|b - <b>_Q| <|f|>_Q`` (gamma 1) or ``<|(b - <b>_Q) f|>_Q`` (gamma 2), on ``Q``."""
    grid = f.grid
    out = np.zeros(grid.shape)
    out[grid.block(Q)] = _gamma_block(b.local[grid.block(Q)], f.local[grid.block(Q)], gamma)
    return GridFunction.from_local(grid, out)


def _gamma_block(bq: np.ndarray, fq: np.ndarray, gamma: int):
    osc = bq - bq.mean()
    if gamma == 1:
        return np.abs(osc) * np.abs(fq).mean()
    if gamma == 2:
        return np.abs(osc * fq).mean()
    raise DomainError("gamma must be 1 or 2")


def adapted_sparse_apply(S: SparseCollection, bs: Sequence[GridFunction], gammas: Sequence[int],
                         fs: Sequence[GridFunction], I: Sequence[int]) -> GridFunction:
    """``sum_Q prod_s Gamma(b_s, f_s, Q, gamma_s) prod_{j not in I} <|f_j|>_Q chi_Q``.

    ``bs`` and ``gammas`` align with the 1-based slots ``I``.
    """
    I = list(I)
    if len(bs) != len(I) or len(gammas) != len(I):
        raise DomainError("symbols and gammas must align with the commuted slots")
    if any(not 1 <= i <= len(fs) for i in I):
        raise DomainError("commuted slot out of range")
    grid = S.grid
    out = np.zeros(grid.shape)
    fl = [f.local for f in fs]
    bl = {i: b.local for i, b in zip(I, bs)}
    gam = dict(zip(I, gammas))
    for Q in S.cubes:
        sl = grid.block(Q)
        term = 1.0
        for j in range(1, len(fs) + 1):
            if j in gam:
                term = term * _gamma_block(bl[j][sl], fl[j - 1][sl], gam[j])
            else:
                term = term * np.abs(fl[j - 1][sl]).mean()
        out[sl] += term
    return GridFunction.from_local(grid, out)


def sparse_operator(S: SparseCollection, fs: Sequence[GridFunction]) -> GridFunction:
    """Classical m-linear sparse operator ``sum_Q prod_j <|f_j|>_Q chi_Q``."""
    return adapted_sparse_apply(S, [], [], fs, [])


def oscillation_operator(S: SparseCollection, b: GridFunction, f: GridFunction) -> GridFunction:
    """``sum_Q |b - <b>_Q| <|f|>_Q chi_Q``."""
    return adapted_sparse_apply(S, [b], [1], [f], [1])


def all_gammas(ell: int) -> list[tuple[int, ...]]:
    return list(itertools.product((1, 2), repeat=ell))


# -- oscillation stopping time ----------------------------------------------

def augment_for_symbol(S: SparseCollection, b: GridFunction, ratio: float = 2.0) -> SparseCollection:
    """Enlarge ``S`` so that ``|b - <b>_Q|`` is dominated on every ``Q`` in ``S``.

    Starting from each cube, stop on the maximal subcubes ``J`` where the local
    oscillation ``<|b - <b>_Q|>_J`` exceeds ``ratio`` times its value on ``Q``,
    and repeat from every stopping cube.  The realized constant ``C1`` of

        |b - <b>_Q| <= C1 sum_{J in S~, J in Q} <|b - <b>_J|>_J chi_J

    is stored in ``provenance["C1"]``.
    """
    grid = S.grid
    bl = b.local
    seen = set()
    queue = list(S.cubes)
    while queue:
        Q = queue.pop()
        if Q in seen:
            continue
        seen.add(Q)
        if Q.level == grid.depth:
            continue
        a = np.abs(bl[grid.block(Q)] - bl[grid.block(Q)].mean())
        base = a.mean()
        if base == 0:
            continue
        for J in _stopping_in_block(pyramid(a), Q, ratio * base, skip_top=True):
            if J not in seen:
                queue.append(J)
    out = make_collection(grid, seen, provenance={"source": "augment_for_symbol", "ratio": ratio})
    c1, _ = oscillation_domination(S, out, b)
    out.provenance["C1"] = c1
    return out


def oscillation_domination(S: SparseCollection, S_tilde: SparseCollection, b: GridFunction,
                           C1: float | None = None) -> tuple[float, float]:
    """Realized ``C1`` and, when ``C1`` is given, the minimal slack of the domination.

    The slack is ``C1 * sum_J ... - |b - <b>_Q|`` minimized over ``Q`` in ``S``
    and the leaves of ``Q``.  For ``x`` in ``Q`` the cubes of ``S~`` containing
    ``x`` but not inside ``Q`` are exactly its strict ancestors, so the sum over
    ``J`` inside ``Q`` is a running total minus an ancestor sum.
    """
    grid = S.grid
    bl = b.local
    osc = {J: float(np.abs(bl[grid.block(J)] - bl[grid.block(J)].mean()).mean()) for J in S_tilde.cubes}
    total = np.zeros(grid.shape)
    for J, o in osc.items():
        total[grid.block(J)] += o
    worst, slack = 0.0, np.inf
    for Q in S.cubes:
        sl = grid.block(Q)
        above = sum(osc.get(Q.ancestor(k), 0.0) for k in range(Q.level))
        rhs = total[sl] - above
        lhs = np.abs(bl[sl] - bl[sl].mean())
        pos = lhs > 0
        if np.any(pos & (rhs <= 0)):
            worst = np.inf
        elif np.any(pos):
            worst = max(worst, float((lhs[pos] / rhs[pos]).max()))
        if C1 is not None:
            slack = min(slack, float((C1 * rhs - lhs).min()))
    return worst, slack


# -- commutator domination ----------------------------------------------------

@dataclass
class DominationCertificate:
    collection: SparseCollection
    constant: float
    per_leaf_slack: GridFunction | None
    provenance: dict = field(default_factory=dict, repr=False)
    failure: str | None = None

    @property
    def min_slack(self) -> float:
        if self.per_leaf_slack is None:
            return -np.inf
        return float(self.per_leaf_slack.values.min())

    def passed(self, tol: float = 1e-10, eta: float = 0.5) -> bool:
        return (self.failure is None and self.min_slack >= -tol
                and bool(verify_sparsity(self.collection, eta)))

    def to_dict(self) -> dict:
        S = self.collection
        bits = {Q.key(): base64.b64encode(np.packbits(S.witness[Q]).tobytes()).decode() for Q in S.cubes}
        return {"schema": SCHEMA, **S.grid.to_dict(), "eta": S.eta, "constant": self.constant,
                "cubes": [Q.key() for Q in S.cubes], "witness_bitsets": bits,
                "min_slack": self.min_slack, "failure": self.failure}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def collection_from_certificate(data: dict) -> SparseCollection:
    grid = DyadicGrid(int(data["dim"]), int(data["depth"]), tuple(data.get("shift", ())))
    cubes = [Cube.from_key(k) for k in data["cubes"]]
    witness = {}
    for Q in cubes:
        raw = np.frombuffer(base64.b64decode(data["witness_bitsets"][Q.key()]), dtype=np.uint8)
        witness[Q] = np.unpackbits(raw)[: grid.n_leaves].astype(bool)
    return SparseCollection(grid, cubes, float(data["eta"]), witness)


def verify_certificate_dict(data: dict, tol: float = 1e-10) -> SparsityCheck:
    """Re-check a serialized certificate without rerunning the constructor."""
    if data.get("schema") != SCHEMA:
        return SparsityCheck(False, f"unknown certificate schema {data.get('schema')!r}")
    if data.get("failure"):
        return SparsityCheck(False, f"constructor failure: {data['failure']}")
    check = verify_sparsity(collection_from_certificate(data))
    if not check:
        return check
    if not data.get("min_slack", -np.inf) >= -tol:
        return SparsityCheck(False, f"recorded min slack {data.get('min_slack')} below -{tol}")
    return SparsityCheck(True)


def _exceptional_ratio(T: DyadicOperator, Q: Cube, fl, bl, slots) -> np.ndarray:
    """Pointwise ``max_A max(|prod g^A|, T_#(g^A)) / prod <|g^A|>`` on the block of ``Q``."""
    sl = T.grid.block(Q)
    fq = [f[sl] for f in fl]
    centered = {i: bl[i][sl] - bl[i][sl].mean() for i in slots}
    r = np.zeros(fq[0].shape)
    for size in range(len(slots) + 1):
        for A in itertools.combinations(slots, size):
            g = [centered[j + 1] * fq[j] if (j + 1) in A else fq[j] for j in range(len(fq))]
            avgprod = np.prod([np.abs(x).mean() for x in g])
            tsharp = T.evaluate_block(g, Q, mode="max")
            pointwise = np.abs(np.prod(g, axis=0))
            num = np.maximum(tsharp, pointwise)
            if avgprod > 0:
                ratio = num / avgprod
            else:
                ratio = np.where(num > 0, np.inf, 0.0)
            r = np.maximum(r, ratio)
    return r


def sparse_dominate_commutator(T: DyadicOperator, bs: Mapping[int, GridFunction],
                               fs: Sequence[GridFunction], I: Sequence[int] | None = None,
                               max_doublings: int = 200) -> DominationCertificate:
    """Stopping-time sparse domination of ``[b_i1, ..., [b_il, T]_il ...]_i1 (f)``.

    On each cube ``Q`` (starting at the root) the exceptional set collects the
    leaves where, for some subset ``A`` of commuted slots, the pointwise
    product or the maximal truncation of the localized operator at
    ``g^A = (... (b_i - <b_i>_Q) f_i for i in A ...)`` exceeds ``C`` times
    ``prod <|g^A|>_Q``.  ``C`` is bracketed by doubling from 1 and then set to
    the smallest value with ``|E| <= 2^-(n+2) |Q|``.  The stopping cubes of
    ``chi_E`` at level ``2^-(n+1)`` are recursed on.  The certificate constant
    is the largest ``C`` used.
    """
    grid = T.grid
    I = sorted(bs) if I is None else sorted(I)
    if sorted(bs) != I:
        raise DomainError("one symbol per commuted slot is required")
    n = grid.dim
    fl = [f.local for f in fs]
    bl = {i: bs[i].local for i in I}
    cubes, trace = [], []
    constant, failure = 0.0, None
    stack = [grid.root]
    while stack:
        Q = stack.pop()
        cubes.append(Q)
        if Q.level == grid.depth:
            continue
        r = _exceptional_ratio(T, Q, fl, bl, I)
        n_q = r.size
        allowed = int(np.floor(n_q * 2.0 ** (-(n + 2))))
        C = 1.0
        for _ in range(max_doublings):
            if np.count_nonzero(r > C) <= allowed:
                break
            C *= 2
        else:
            failure = f"threshold search did not meet the measure condition on {Q.key()}"
            break
        rs = np.sort(r, axis=None)[::-1]
        C_min = float(rs[allowed]) if allowed < n_q else 0.0
        E = r > C_min
        P = _stopping_in_block(pyramid(E.astype(float)), Q, 2.0 ** (-(n + 1)))
        constant = max(constant, C_min)
        p_leaves, meets = 0, True
        q_side = 2 ** (grid.depth - Q.level)
        for p in P:
            p_side = 2 ** (grid.depth - p.level)
            block = E[tuple(slice(i * p_side - q * q_side, (i + 1) * p_side - q * q_side)
                            for i, q in zip(p.index, Q.index))]
            p_leaves += block.size
            meets = meets and not bool(block.all())
        trace.append({"cube": Q.key(), "doubling_C": C, "C": C_min, "E_leaves": int(E.sum()),
                      "stopping": [p.key() for p in P], "stopping_fraction": p_leaves / n_q,
                      "stopping_meet_complement": meets})
        stack.extend(P)
    S = make_collection(grid, cubes, eta=0.5, provenance={"trace": trace})
    if failure is not None:
        return DominationCertificate(S, constant, None, {"trace": trace}, failure)
    lhs = abs(first_order_commutator(T, {i: bs[i] for i in I})(*fs))
    rhs = sum((adapted_sparse_apply(S, [bs[i] for i in I], g, fs, I) for g in all_gammas(len(I))),
              GridFunction.constant(grid, 0.0))
    slack = constant * rhs - lhs
    return DominationCertificate(S, constant, slack, {"trace": trace, "lhs_max": lhs.max_abs()})
