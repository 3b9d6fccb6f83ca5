"""Experiment harness: random instances, norm estimates and one check per inequality.

Every check takes an :class:`ExperimentConfig` and returns one
:class:`TrialReport` per trial.  Trial ``t`` draws from its own generator
seeded by ``(seed, t)``, so results do not depend on how trials are scheduled.
"""

from __future__ import annotations

import csv
import itertools
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dyadic import (
    Cube,
    DomainError,
    DyadicGrid,
    GridFunction,
    HaarIndex,
    cancellative_indices,
    dyadic_maximal,
    expand_children,
    haar_function,
    lp_norm,
    upsample,
    weak_lp_norm,
)
from .operators import (
    CommutatorSpec,
    HaarMultiplierSpec,
    ParaproductSpec,
    build_iterated_commutator,
    conjugated_family,
    constant_epsilon,
    first_order_commutator,
    maximal_truncation,
    random_sign_epsilon,
)
from .sparse import (
    adapted_sparse_apply,
    all_gammas,
    augment_for_symbol,
    oscillation_domination,
    sparse_dominate_commutator,
    sparse_operator,
    verify_sparsity,
)
from .weights import (
    BloomSetup,
    ExponentVector,
    WeightVector,
    ap_characteristic,
    bmo_norm,
    conjugate_weight,
    dual_weight_vector,
    john_nirenberg_check,
    multilinear_ap_characteristic,
    theorem_constant,
    weight_product,
    weighted_bmo_norm,
)

REPORT_SCHEMA = "bloomlab.report/1"
MAX_DEPTH = {1: 14, 2: 7}


class ConfigError(DomainError):
    """An experiment configuration that does not fit the schema."""


# -- configuration ----------------------------------------------------------

@dataclass
class ExperimentConfig:
    dim: int = 1
    depth: int = 6
    shift: tuple = ()
    p: tuple = (2.0, 2.0)
    I: tuple = (1, 2)
    operator: dict = field(default_factory=lambda: {"kind": "haar_multiplier"})
    weights: dict = field(default_factory=lambda: {"strength": 0.5, "max_char": 4.0, "decay": 0.7})
    symbols: dict = field(default_factory=lambda: {"norm": 1.0, "density": 0.5, "decay": 0.7})
    inputs: dict = field(default_factory=lambda: {"kind": "martingale", "decay": 0.7})
    trials: int = 10
    seed: int = 0
    tolerance: float = 1e-10
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.shift = tuple(self.shift)
        self.p = tuple(float(x) for x in self.p)
        self.I = tuple(int(i) for i in self.I)
        self.validate()

    @property
    def m(self) -> int:
        return len(self.p)

    @property
    def grid(self) -> DyadicGrid:
        return DyadicGrid(self.dim, self.depth, self.shift)

    @property
    def exponents(self) -> ExponentVector:
        return ExponentVector(self.p)

    def validate(self) -> None:
        if self.dim not in MAX_DEPTH:
            raise ConfigError(f"dim must be 1 or 2, got {self.dim}")
        if not 1 <= self.depth <= MAX_DEPTH[self.dim]:
            raise ConfigError(f"depth must lie in 1..{MAX_DEPTH[self.dim]} for dim {self.dim}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        try:
            ExponentVector(self.p)
            self.grid
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        if len(set(self.I)) != len(self.I) or any(not 1 <= i <= self.m for i in self.I):
            raise ConfigError(f"commuted slots must be distinct in 1..{self.m}")
        kind = self.operator.get("kind")
        if kind not in ("haar_multiplier", "paraproduct"):
            raise ConfigError(f"unknown operator kind {kind!r}")
        alphas = self.operator.get("alphas")
        if alphas is not None:
            extra = 1 if kind == "haar_multiplier" else 2
            if len(alphas) != self.m + extra:
                raise ConfigError(f"{kind} with {self.m} inputs needs {self.m + extra} Haar indices")
        if self.tolerance < 0:
            raise ConfigError("tolerance must be nonnegative")

    def replace(self, **kw) -> ExperimentConfig:
        data = self.to_dict()
        data.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig.from_dict(data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["shift"] = list(self.shift)
        out["p"] = list(self.p)
        out["I"] = list(self.I)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"check", "schema"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**{k: v for k, v in data.items() if k in known})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class TrialReport:
    trial: int
    passed: bool
    metrics: dict = field(default_factory=dict)
    message: str = ""
    skipped: bool = False
    millis: float = 0.0
    artifacts: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def ratio(self) -> float:
        return self.metrics.get("ratio", float("nan"))

    def row(self) -> dict:
        return {"trial": self.trial, "passed": self.passed, "skipped": self.skipped,
                **self.metrics, "millis": round(self.millis, 3), "message": self.message}


# -- random instances ---------------------------------------------------------

def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(trial)])


def child_rng(rng) -> np.random.Generator:
    """Independent stream for one random object.

    Martingales and coefficient maps draw level by level, so an object drawn
    from its own stream has the same coarse levels at every grid depth; a
    deeper trial refines the shallower one instead of replacing it.
    """
    return np.random.default_rng(int(_rng(rng).integers(2**63)))


def random_martingale(grid: DyadicGrid, rng, density: float = 1.0, decay: float = 1.0) -> np.ndarray:
    """Local array of ``sum_I s_I decay^level(I) |I|^(1/2) h_I^(a_I)`` with random signs ``s_I``.

    Each cube takes part with probability ``density`` and draws one random
    cancellative index, so level ``k`` adds ``+-decay^k`` on the cubes it
    touches.  With ``decay < 1`` refining the grid adds ever smaller detail.
    """
    rng = _rng(rng)
    n = grid.dim
    alphas = cancellative_indices(n)
    beta = np.zeros((1,) * n)
    for k in range(grid.depth):
        shape = (2**k,) * n
        sign = rng.choice([-1.0, 1.0], size=shape) * (rng.random(shape) < density) * decay**k
        pick = rng.integers(len(alphas), size=shape)
        inc = sum(expand_children(sign * (pick == t), a.pattern()) for t, a in enumerate(alphas))
        beta = upsample(beta) + inc
    return beta


def random_weight(grid: DyadicGrid, seed, strength: float, decay: float = 1.0) -> GridFunction:
    """``exp(s * beta)`` for a random sign martingale ``beta``; ``s = 0`` gives 1."""
    if strength < 0:
        raise DomainError("strength must be nonnegative")
    beta = random_martingale(grid, seed, 1.0, decay)
    return GridFunction.from_local(grid, np.exp(strength * beta))


def calibrated_weight(grid: DyadicGrid, rng, strength: float, p: float,
                      max_char: float = 4.0, decay: float = 1.0) -> tuple[GridFunction, float]:
    """A random weight with ``[w]_{A_p} <= max_char``, halving the strength until it fits."""
    rng = _rng(rng)
    beta = random_martingale(grid, rng, 1.0, decay)
    s = strength
    while True:
        w = GridFunction.from_local(grid, np.exp(s * beta))
        if ap_characteristic(w, p) <= max_char:
            return w, s
        s /= 2


def random_bmo_symbol(grid: DyadicGrid, seed, target_norm: float = 1.0,
                      density: float = 0.5, decay: float = 1.0) -> GridFunction:
    """Random martingale on a random sub-family of cubes, rescaled to dyadic BMO norm ``c``."""
    if target_norm < 0:
        raise DomainError("target norm must be nonnegative")
    rng = _rng(seed)
    beta = random_martingale(grid, rng, density, decay)
    if not np.any(beta) and grid.depth > 0:
        beta = random_martingale(grid, rng, 1.0, decay)
    b = GridFunction.from_local(grid, beta)
    norm = bmo_norm(b)
    if target_norm == 0 or norm == 0:
        return GridFunction.constant(grid, 0.0)
    return b * (target_norm / norm)


def random_inputs(grid: DyadicGrid, rng, m: int, kind: str = "gaussian",
                  decay: float = 0.7) -> list[GridFunction]:
    """Gaussian white noise, or Gaussian-amplitude martingales with decaying increments."""
    rng = _rng(rng)
    if kind == "gaussian":
        return [GridFunction(grid, rng.normal(size=grid.n_leaves)) for _ in range(m)]
    if kind != "martingale":
        raise ConfigError(f"unknown input kind {kind!r}")
    out = []
    for _ in range(m):
        beta = random_martingale(grid, rng, 1.0, decay) + rng.normal()
        out.append(GridFunction.from_local(grid, beta))
    return out


def config_inputs(config: ExperimentConfig, rng) -> list[GridFunction]:
    kind, decay = config.inputs.get("kind", "gaussian"), float(config.inputs.get("decay", 0.7))
    return [random_inputs(config.grid, child_rng(rng), 1, kind, decay)[0] for _ in range(config.m)]


def config_symbol(config: ExperimentConfig, rng, norm: float | None = None) -> GridFunction:
    sy = config.symbols
    return random_bmo_symbol(config.grid, child_rng(rng), float(sy.get("norm", 1.0)) if norm is None else norm,
                             float(sy.get("density", 0.5)), float(sy.get("decay", 1.0)))


def config_weight(config: ExperimentConfig, rng, p: float) -> tuple[GridFunction, float]:
    w = config.weights
    return calibrated_weight(config.grid, child_rng(rng), float(w.get("strength", 0.3)), p,
                             float(w.get("max_char", 4.0)), float(w.get("decay", 1.0)))


def default_alphas(kind: str, m: int, dim: int) -> list[tuple[int, ...]]:
    zero, one = (0,) * dim, (1,) * dim
    if kind == "haar_multiplier":
        return [zero] * (m + 1)
    return [zero, zero] + [one] * (m - 1) + [zero]


def build_operator(config: ExperimentConfig, rng) -> HaarMultiplierSpec | ParaproductSpec:
    """The configured base operator with random-sign (default) or constant coefficients."""
    rng = _rng(rng)
    grid = config.grid
    op = config.operator
    kind = op["kind"]
    alphas = op.get("alphas") or default_alphas(kind, config.m, config.dim)
    if op.get("epsilon", "random") == "constant":
        eps = constant_epsilon(grid, float(op.get("epsilon_value", 1.0)))
    else:
        eps = random_sign_epsilon(grid, child_rng(rng))
    try:
        if kind == "haar_multiplier":
            return HaarMultiplierSpec(grid, eps, tuple(alphas))
        symbol = random_bmo_symbol(grid, child_rng(rng), float(op.get("symbol_norm", 1.0)))
        return ParaproductSpec(grid, symbol, eps, tuple(alphas))
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def random_bloom_setup(config: ExperimentConfig, rng) -> tuple[BloomSetup, dict]:
    """Calibrated weight vectors: independent ``mu_i, lambda_i`` on commuted slots, equal elsewhere."""
    rng = _rng(rng)
    ex = config.exponents
    mus, lams, used = [], [], []
    for j in range(1, config.m + 1):
        pj = ex.p_list[j - 1]
        mu, s1 = config_weight(config, rng, pj)
        if j in config.I:
            lam, s2 = config_weight(config, rng, pj)
        else:
            lam, s2 = mu, s1
        mus.append(mu)
        lams.append(lam)
        used += [s1, s2]
    setup = BloomSetup(ex, config.I, WeightVector(tuple(mus), ex), WeightVector(tuple(lams), ex))
    return setup, {"min_strength": min(used)}


# -- operator norms -----------------------------------------------------------

def _norm_ratio(T, setup: BloomSetup, fs) -> float:
    den = 1.0
    for f, mu, pj in zip(fs, setup.mu.weights, setup.exponents.p_list):
        den *= lp_norm(f, pj, mu)
    if den == 0:
        return 0.0
    return lp_norm(T(*fs), setup.exponents.p, setup.target_weight()) / den


def _structured_inputs(grid: DyadicGrid, m: int, rng) -> list[list[GridFunction]]:
    """Haar test functions ``|J|^(1/2) h_J^a`` on a random cube ``J`` for every index pattern."""
    level = int(rng.integers(0, max(grid.depth, 1)))
    J = Cube(level, tuple(int(i) for i in rng.integers(0, 2**level, size=grid.dim)))
    out = []
    alphas = [HaarIndex(b) for b in itertools.product((0, 1), repeat=grid.dim)]
    for combo in itertools.product(alphas, repeat=m):
        fs = []
        for a in combo:
            if a.cancellative and J.level >= grid.depth:
                break
            fs.append(np.sqrt(J.measure) * haar_function(grid, J, a))
        if len(fs) == m:
            out.append(fs)
    return out


def _refine(T, setup: BloomSetup, fs: list[GridFunction], sweeps: int = 3, iters: int = 10) -> float:
    """Alternating Boyd-type ascent over slots for all-``p_j = 2`` setups.

    With every slot but ``j`` frozen the operator is a matrix ``A``; the update
    ``u <- A^T psi_p(A u)`` (normalized) is the power step for the ``L^2 -> L^p``
    norm.  Only evaluated ratios are kept, so the result is a true lower bound.
    """
    grid = fs[0].grid
    nu = setup.target_weight().values
    p = setup.exponents.p
    best = _norm_ratio(T, setup, fs)
    fs = list(fs)
    for _ in range(sweeps):
        for j in range(len(fs)):
            mu = setup.mu.weights[j].values
            scale = 1.0 / np.sqrt(mu * grid.leaf_measure)
            cols = []
            for y in range(grid.n_leaves):
                e = np.zeros(grid.n_leaves)
                e[y] = scale[y]
                args = list(fs)
                args[j] = GridFunction(grid, e)
                cols.append(T(*args).values)
            A = np.array(cols).T * (nu * grid.leaf_measure) ** (1.0 / p)
            u = fs[j].values / scale
            for _ in range(iters):
                v = A @ u
                g = A.T @ (np.abs(v) ** (p - 1) * np.sign(v))
                nrm = np.linalg.norm(g)
                if nrm == 0:
                    break
                u = g / nrm
                cand = list(fs)
                cand[j] = GridFunction(grid, u * scale)
                r = _norm_ratio(T, setup, cand)
                if r > best:
                    best, fs = r, cand
    return best


def estimate_operator_norm(T, setup: BloomSetup, trials: int = 20, seed: int = 0,
                           refine_max_leaves: int = 128) -> float:
    """Lower estimate of the norm ``prod L^{p_j}(mu_j) -> L^p(nu_lambda)``.

    Maximum ratio over ``trials`` random Gaussian inputs and the structured
    Haar test functions.  When every ``p_j`` is 2 and the grid is small, an
    alternating ascent from the structured start adds a refined candidate.
    The structured part does not depend on ``trials``, so the estimate is
    nondecreasing in the trial count.
    """
    grid = setup.mu.weights[0].grid
    m = setup.m
    base = np.random.default_rng([int(seed), 0])
    best = 0.0
    structured = _structured_inputs(grid, m, base)
    for fs in structured:
        best = max(best, _norm_ratio(T, setup, fs))
    if all(pj == 2 for pj in setup.exponents.p_list) and grid.n_leaves <= refine_max_leaves:
        start = max(structured, key=lambda fs: _norm_ratio(T, setup, fs)) if structured else None
        if start is not None:
            best = max(best, _refine(T, setup, start))
    for t in range(trials):
        rng = np.random.default_rng([int(seed), 1, t])
        best = max(best, _norm_ratio(T, setup, random_inputs(grid, rng, m)))
    return best


# -- trial runner -------------------------------------------------------------

def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("BLOOMLAB_THREADS", "1")))
    except ValueError:
        return 1


def run_trials(config: ExperimentConfig, trial_fn: Callable[[ExperimentConfig, np.random.Generator], TrialReport],
               threads: int | None = None) -> list[TrialReport]:
    """Run ``trial_fn`` once per trial; results come back in trial order."""
    threads = thread_count() if threads is None else threads

    def one(t: int) -> TrialReport:
        start = time.perf_counter()
        rep = trial_fn(config, trial_rng(config.seed, t))
        rep.trial = t
        rep.millis = 1000 * (time.perf_counter() - start)
        return rep

    if threads <= 1 or config.trials == 1:
        return [one(t) for t in range(config.trials)]
    with ThreadPoolExecutor(max_workers=min(threads, config.trials)) as pool:
        return list(pool.map(one, range(config.trials)))


def summarize(reports: Sequence[TrialReport]) -> dict:
    done = [r for r in reports if not r.skipped]
    ratios = [r.metrics["ratio"] for r in done if "ratio" in r.metrics]
    slacks = [r.metrics["min_slack"] for r in done if "min_slack" in r.metrics]
    failed = [r for r in reports if not r.passed]
    constants = [r.metrics["constant"] for r in done if "constant" in r.metrics]
    return {"max_constant": max(constants) if constants else None, "trials": len(reports), "skipped": len(reports) - len(done), "failed": len(failed),
            "passed": not failed, "max_ratio": max(ratios) if ratios else None,
            "min_slack": min(slacks) if slacks else None,
            "first_failure": ({"trial": failed[0].trial, "message": failed[0].message} if failed else None)}


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_report(path, check: str, config: ExperimentConfig, reports: Sequence[TrialReport]) -> dict:
    doc = {"schema": REPORT_SCHEMA, "check": check, "config": config.to_dict(),
           "summary": summarize(reports), "trials": [r.row() for r in reports]}
    Path(path).write_text(json.dumps(_clean(doc), indent=1))
    return doc


def write_csv(path, reports: Sequence[TrialReport]) -> None:
    rows = [_clean(r.row()) for r in reports]
    keys = ["trial", "passed", "skipped"]
    for r in rows:
        keys += [k for k in r if k not in keys and k not in ("millis", "message")]
    keys += ["millis", "message"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


# -- sparse domination --------------------------------------------------------

def domination_trial(config: ExperimentConfig, rng) -> TrialReport:
    T = build_operator(config, rng)
    bs = {i: config_symbol(config, rng) for i in config.I}
    fs = config_inputs(config, rng)
    cert = sparse_dominate_commutator(T, bs, fs, config.I)
    trace = cert.provenance.get("trace", [])
    stop_ok = all(t["stopping_fraction"] < 0.5 and t["stopping_meet_complement"] for t in trace)
    sparse_ok = verify_sparsity(cert.collection, 0.5)
    metrics = {"constant": cert.constant, "min_slack": cert.min_slack, "cubes": len(cert.collection),
               "eta": cert.collection.realized_eta()}
    ok = cert.failure is None and cert.min_slack >= -config.tolerance and bool(sparse_ok) and stop_ok
    msg = cert.failure or ("" if ok else sparse_ok.message or
                           ("stopping cube condition failed" if not stop_ok else "negative slack"))
    return TrialReport(0, ok, metrics, msg, artifacts={"certificate": cert})


def check_domination(config: ExperimentConfig) -> list[TrialReport]:
    return run_trials(config, domination_trial)


# -- Bloom bound --------------------------------------------------------------

def bloom_trial_data(T, setup: BloomSetup, bs: dict[int, GridFunction], fs: Sequence[GridFunction],
                     tol: float = 1e-10, sparse_chain: bool = True) -> TrialReport:
    """The two-weight bound and its sparse-form chain for explicit data.

    ``LHS = ||[b, T]_I f||_{L^p(nu_lambda)}`` and
    ``RHS = C(mu, lambda, p) prod ||b_i||_{BMO(nu_i)} prod ||f_j||_{L^{p_j}(mu_j)}``.

    The chain checks, pointwise and with realized constants:
    the oscillation domination of every commuted symbol on ``S~``;
    ``T_b(f) <= C1 ||b|| A_{S~}(nu, A_S |f|)``; and for each gamma
    ``A^gamma <= prod_{gamma=1} T_b(f) * prod_{gamma=2} C1 ||b|| *
    A_S(..., A_{S~}(|f_s|) nu_s, ..., |f_j|, ...)``.
    """
    ex = setup.exponents
    I = setup.commuted
    grid = fs[0].grid
    nu_lam = setup.target_weight()
    metrics: dict = {}
    metrics["theorem_constant"] = C = theorem_constant(setup)
    for i in I:
        metrics[f"mu{i}_Ap"] = ap_characteristic(setup.mu.weights[i - 1], ex.p_list[i - 1])
        metrics[f"lambda{i}_Ap"] = ap_characteristic(setup.lam.weights[i - 1], ex.p_list[i - 1])
    if setup.reduced_weights is not None:
        metrics["w_Aq"] = multilinear_ap_characteristic(setup.reduced_weights)
    bnorm = {i: weighted_bmo_norm(bs[i], setup.bloom_weight(i)) for i in I}
    for i in I:
        metrics[f"b{i}_bmo_nu"] = bnorm[i]
    op = first_order_commutator(T, {i: bs[i] for i in I})
    Kf = op(*fs)
    lhs = lp_norm(Kf, ex.p, nu_lam)
    rhs = C * float(np.prod([bnorm[i] for i in I])) * float(np.prod(
        [lp_norm(f, pj, mu) for f, pj, mu in zip(fs, ex.p_list, setup.mu.weights)]))
    metrics["lhs"], metrics["rhs"] = lhs, rhs
    if rhs == 0:
        metrics["ratio"] = 0.0 if lhs == 0 else float("inf")
    else:
        metrics["ratio"] = lhs / rhs
    ok = np.isfinite(metrics["ratio"]) and metrics["ratio"] >= 0
    msg = "" if ok else "infinite ratio"
    if sparse_chain and ok:
        chain_ok, chain_msg = _sparse_chain(T, setup, bs, fs, bnorm, rhs, metrics, tol)
        ok, msg = chain_ok, chain_msg
    return TrialReport(0, bool(ok), metrics, msg)


def _sparse_chain(T, setup, bs, fs, bnorm, rhs, metrics, tol) -> tuple[bool, str]:
    ex = setup.exponents
    I = setup.commuted
    nu_lam = setup.target_weight()
    cert = sparse_dominate_commutator(T, bs, fs, I)
    metrics["sparse_constant"] = cert.constant
    metrics["domination_slack"] = cert.min_slack
    if cert.failure or cert.min_slack < -tol:
        return False, cert.failure or "sparse domination slack negative"
    S = cert.collection
    absf = [abs(f) for f in fs]
    worst = np.inf
    tb, Stil, c1 = {}, {}, {}
    for i in I:
        Stil[i] = augment_for_symbol(S, bs[i])
        c1[i] = Stil[i].provenance["C1"]
        metrics[f"C1_{i}"] = c1[i]
        _, sl = oscillation_domination(S, Stil[i], bs[i], c1[i] * (1 + 1e-12))
        worst = min(worst, sl)
        nu = setup.bloom_weight(i)
        tb[i] = adapted_sparse_apply(S, [bs[i]], [1], [fs[i - 1]], [1])
        bound = c1[i] * bnorm[i] * sparse_operator(Stil[i], [nu, sparse_operator(S, [absf[i - 1]])])
        worst = min(worst, float((bound.values * (1 + 1e-12) - tb[i].values).min()))
    metrics["oscillation_slack"] = worst
    chain = np.inf
    for gam in all_gammas(len(I)):
        A = adapted_sparse_apply(S, [bs[i] for i in I], gam, fs, I)
        ratio_key = "sparse_ratio_" + "".join(map(str, gam))
        metrics[ratio_key] = (cert.constant * lp_norm(A, ex.p, nu_lam) / rhs) if rhs > 0 else 0.0
        factor = GridFunction.constant(S.grid, 1.0)
        args = []
        for j in range(1, setup.m + 1):
            if j in I:
                g = gam[I.index(j)]
                if g == 1:
                    factor = factor * tb[j]
                else:
                    factor = factor * (c1[j] * bnorm[j])
                    args.append(sparse_operator(Stil[j], [absf[j - 1]]) * setup.bloom_weight(j))
            else:
                args.append(absf[j - 1])
        bound = factor * sparse_operator(S, args)
        chain = min(chain, float((bound.values * (1 + 1e-12) - A.values).min()))
    metrics["chain_slack"] = chain
    metrics["min_slack"] = min(worst, chain, cert.min_slack)
    if worst < -tol or chain < -tol:
        return False, "sparse-form chain violated"
    return True, ""


def bloom_trial(config: ExperimentConfig, rng) -> TrialReport:
    T = build_operator(config, rng)
    setup, info = random_bloom_setup(config, rng)
    norm = float(config.symbols.get("norm", 1.0))
    bs = {}
    for i in config.I:
        b = config_symbol(config, rng, 1.0)
        nb = weighted_bmo_norm(b, setup.bloom_weight(i))
        bs[i] = b * (norm / nb) if nb > 0 else b
    fs = config_inputs(config, rng)
    rep = bloom_trial_data(T, setup, bs, fs, config.tolerance,
                           bool(config.params.get("sparse_chain", True)))
    rep.metrics.update(info)
    return rep


def check_bloom(config: ExperimentConfig) -> list[TrialReport]:
    return run_trials(config, bloom_trial)


# -- Cauchy identity ----------------------------------------------------------

def mixed_difference(spec: CommutatorSpec, fs, h: float) -> GridFunction:
    """Mixed central difference of ``F`` in all symbol variables at ``z = 0``."""
    K = spec.total_order
    m = len(spec.orders)
    total = None
    for signs in itertools.product((1.0, -1.0), repeat=K):
        zs, t = [], 0
        for k in spec.orders:
            zs.append([signs[t + i] * h for i in range(k)])
            t += k
        term = float(np.prod(signs)) * conjugated_family(spec, zs, fs)
        total = term if total is None else total + term
    if total is None:
        return conjugated_family(spec, [[] for _ in range(m)], fs)
    return total * (1.0 / (2 * h) ** K)


def cauchy_step(order: int, sup_b: float) -> float:
    """Difference step ``h0 / max(1, ||b||_inf)``.

    ``h0`` is 1e-4 at order 1 and widens to 1e-3 and 1e-2 at orders 2 and 3,
    where rounding grows like ``eps / h^order`` and extrapolation removes the
    leading truncation term.
    """
    base = {1: 1e-4, 2: 1e-3}.get(order, 1e-2)
    return base / max(1.0, sup_b)


def cauchy_trial_data(spec: CommutatorSpec, fs, mus: Sequence[GridFunction] | None = None,
                      exponents: ExponentVector | None = None, delta_eps: float = 0.1,
                      angles: int = 8) -> dict:
    exact = build_iterated_commutator(spec)(*fs)
    K = spec.total_order
    scale = max(exact.max_abs(), 1e-300)
    if K == 0:
        err = (conjugated_family(spec, [[] for _ in spec.orders], fs) - exact).max_abs() / scale
        return {"rel_error": err, "order": float("nan"), "h": 0.0}
    sup_b = max(b.max_abs() for _, b in spec.flat_symbols())
    h = cauchy_step(K, sup_b)
    d1, d2 = mixed_difference(spec, fs, h), mixed_difference(spec, fs, h / 2)
    rich = (4.0 * d2 - d1) * (1.0 / 3.0)
    out = {"h": h, "rel_error": (rich - exact).max_abs() / scale,
           "rel_error_plain": (d2 - exact).max_abs() / scale}
    hc = 2e-2 / max(1.0, sup_b)
    e1 = (mixed_difference(spec, fs, hc) - exact).max_abs()
    e2 = (mixed_difference(spec, fs, hc / 2) - exact).max_abs()
    out["order"] = float(np.log2(e1 / e2)) if e2 > 0 else float("nan")
    if mus is not None and exponents is not None:
        # conjugated weights on the circles |z_j^i| = eps / (p_j ||b_j^i||)
        base_char = multilinear_ap_characteristic(WeightVector(tuple(mus), exponents))
        worst = 1.0
        for theta in np.linspace(0, 2 * np.pi, angles, endpoint=False):
            ws = []
            for j, (syms, mu) in enumerate(zip(spec.symbols, mus)):
                pj = exponents.p_list[j]
                w = mu
                for b in syms:
                    nb = bmo_norm(b)
                    if nb > 0:
                        w = conjugate_weight(w, b, delta_eps / (pj * nb) * np.exp(1j * theta), pj)
                ws.append(w)
            worst = max(worst, multilinear_ap_characteristic(WeightVector(tuple(ws), exponents)) / base_char)
        out["circle_char_ratio"] = worst
    return out


def cauchy_trial(config: ExperimentConfig, rng) -> TrialReport:
    orders = tuple(config.params.get("orders", [1] + [0] * (config.m - 1)))
    if len(orders) != config.m or any(k < 0 for k in orders):
        raise ConfigError("orders need one nonnegative entry per slot")
    if sum(orders) > 3:
        raise ConfigError("total order above 3 exceeds the difference stencil")
    T = build_operator(config, rng)
    syms = tuple(tuple(config_symbol(config, rng) for _ in range(k)) for k in orders)
    spec = CommutatorSpec(T, orders, syms)
    fs = config_inputs(config, rng)
    mus = [config_weight(config, rng, pj)[0] for pj in config.p]
    metrics = cauchy_trial_data(spec, fs, mus, config.exponents,
                                float(config.params.get("delta_eps", 0.1)))
    tol = float(config.params.get("rel_tol", 1e-6))
    ok = metrics["rel_error"] <= tol
    if sum(orders) > 0 and config.params.get("check_order", True):
        ok = ok and abs(metrics["order"] - 2.0) <= 0.2
    return TrialReport(0, bool(ok), metrics, "" if ok else "difference quotient off the commutator")


def check_cauchy(config: ExperimentConfig) -> list[TrialReport]:
    orders = tuple(config.params.get("orders", [1] + [0] * (config.m - 1)))
    if sum(orders) > 3:
        raise ConfigError("total order above 3 exceeds the difference stencil")
    return run_trials(config, cauchy_trial)


# -- conjugation and John-Nirenberg -------------------------------------------

def conjugation_sweep(ws: Sequence[GridFunction], exponents: ExponentVector, bs: Sequence[GridFunction | None],
                      ts: Sequence[float], angles: int = 4) -> list[float]:
    """``max_theta [v]/[w]`` for ``v_j = exp(Re(b_j z_j)) w_j``, ``z_j = t e^(i theta) / ||b_j||``."""
    base = multilinear_ap_characteristic(WeightVector(tuple(ws), exponents))
    out = []
    for t in ts:
        worst = 0.0
        for theta in np.linspace(0, 2 * np.pi, angles, endpoint=False):
            vs = []
            for w, b in zip(ws, bs):
                nb = bmo_norm(b) if b is not None else 0.0
                if b is None or nb == 0 or t == 0:
                    vs.append(w)
                else:
                    vs.append(conjugate_weight(w, b, t * np.exp(1j * theta) / nb, 1.0))
            worst = max(worst, multilinear_ap_characteristic(WeightVector(tuple(vs), exponents)) / base)
        out.append(worst)
    return out


def john_nirenberg_constant(bs: Sequence[GridFunction], target: float = 2.0, tol: float = 1e-6) -> float:
    """Largest ``s`` with ``max_Q <exp(s |b - <b>_Q| / ||b||)>_Q <= target`` for every ``b`` given."""
    best = np.inf
    for b in bs:
        nb = bmo_norm(b)
        if nb == 0:
            continue
        u = b * (1.0 / nb)
        lo, hi = 0.0, 1.0
        while john_nirenberg_check(u * hi)[1] <= target and hi < 1e6:
            lo, hi = hi, 2 * hi
        while hi - lo > tol * hi:
            mid = 0.5 * (lo + hi)
            if john_nirenberg_check(u * mid)[1] <= target:
                lo = mid
            else:
                hi = mid
        best = min(best, lo)
    return float(best)


def calibrate_john_nirenberg(config: ExperimentConfig, corpus: int = 16) -> float:
    """Calibration corpus drawn from a stream disjoint from every trial stream."""
    rng = np.random.default_rng([int(config.seed), 2**32 + 1])
    return john_nirenberg_constant([config_symbol(config, rng, 1.0) for _ in range(corpus)])


def conjugation_trial(config: ExperimentConfig, rng, jn_constant: float | None = None) -> TrialReport:
    ex = config.exponents
    ws = [config_weight(config, rng, pj)[0] for pj in ex.p_list]
    bs = [config_symbol(config, rng, 1.0) for _ in ex.p_list]
    kmax = int(config.params.get("kmax", 10))
    ts = [0.0] + [2.0**-k for k in range(0, kmax + 1)]
    ratios = conjugation_sweep(ws, ex, bs, ts, int(config.params.get("angles", 4)))
    cap = float(config.params.get("ratio_cap", 2.0))
    eps = next((t for t, r in sorted(zip(ts, ratios)) if r > cap), float("nan"))
    metrics = {"ratio_t0": ratios[0], "ratio_tmin": ratios[-1], "ratio_tmax": ratios[1],
               "ratio": ratios[-1], "first_t_over_cap": eps}
    ok = ratios[0] == 1.0 and all(np.isfinite(ratios)) and ratios[-1] <= 1.01
    msg = "" if ok else "conjugated characteristic ratio does not settle"
    if jn_constant is not None:
        jn = max(john_nirenberg_check(b * (0.5 * jn_constant / bmo_norm(b)))[1] for b in bs if bmo_norm(b) > 0)
        metrics["jn_constant"] = jn_constant
        metrics["jn_max_average"] = jn
        if jn > 2.0:
            ok, msg = False, "John-Nirenberg average above 2"
    return TrialReport(0, bool(ok), metrics, msg)


def check_conjugation(config: ExperimentConfig) -> list[TrialReport]:
    cn = calibrate_john_nirenberg(config)
    return run_trials(config, lambda c, r: conjugation_trial(c, r, cn))


# -- lower bound --------------------------------------------------------------

def lower_bound_data(T: HaarMultiplierSpec, b: GridFunction, wv: WeightVector, beta: int = 1,
                     tol: float = 1e-12) -> dict:
    """Test-function lower bound and the oscillation chain on every non-leaf cube.

    Returns the pointwise slack of ``|[b, T]_beta f| >= c |b - <b>_J|`` on ``J``,
    the slack of the Holder chain per cube, the recovered oscillation
    ``sup_J (<|b - <b>_J|^(1/m)>_J)^m`` and its bound ``C^m [w']^((mp-1)/p)``.
    """
    if not isinstance(T, HaarMultiplierSpec):
        raise ConfigError("the lower bound needs a Haar multiplier")
    grid = T.grid
    m = T.m
    if not any(a.cancellative for j, a in enumerate(T.in_alphas, start=1) if j != beta):
        raise ConfigError("some input index other than the commuted slot must be cancellative")
    c = min(float(np.abs(e).min()) for e in T.epsilon)
    if c <= 0:
        raise ConfigError("coefficients must be bounded away from zero")
    ex = wv.exponents
    p = ex.p
    nu = weight_product(wv)
    nu_dual = nu ** (1.0 / (1.0 - m * p))
    comm = first_order_commutator(T, {beta: b})
    pointwise, records = np.inf, []
    for k in range(grid.depth):
        for J in grid.cubes(k):
            fs = [np.sqrt(J.measure) * haar_function(grid, J, a) for a in T.in_alphas]
            F = comm(*fs)
            mask = grid.leaf_mask(J)
            osc = np.abs(b.values - b.values[mask].mean()) * mask
            pointwise = min(pointwise, float((np.abs(F.values) - c * osc).min()))
            wmass = [float((w.values * mask).sum() * grid.leaf_measure) for w in wv.weights]
            R = lp_norm(F, p, nu) / float(np.prod([x ** (1.0 / pj) for x, pj in zip(wmass, ex.p_list)]))
            lhs = float((osc[mask] ** (1.0 / m)).sum() * grid.leaf_measure)
            dual = float((nu_dual.values * mask).sum() * grid.leaf_measure) ** ((m * p - 1) / (m * p))
            rest = float(np.prod([x ** (1.0 / (m * pj)) for x, pj in zip(wmass, ex.p_list)]))
            records.append((J, R, lhs, dual * rest))
    sup_R = max(r[1] for r in records)
    C = (sup_R / c) ** (1.0 / m)
    chain = min(C * rhs - lhs for _, _, lhs, rhs in records)
    recovered = max((lhs / J.measure) ** m for J, _, lhs, _ in records)
    wdual = dual_weight_vector(wv)
    dual_char = multilinear_ap_characteristic(wdual)
    bound = C**m * dual_char ** ((m * p - 1) / p)
    nu_wd = weight_product(wdual)
    identity = float(np.max(np.abs(nu_wd.values - nu_dual.values) / np.abs(nu_dual.values)))
    return {"pointwise_slack": pointwise, "chain_slack": chain, "measured_C": C,
            "recovered_oscillation": recovered, "oscillation_bound": bound,
            "dual_char": dual_char, "nu_identity_error": identity, "c": c,
            "ratio": recovered / bound if bound > 0 else 0.0}


def lower_bound_trial(config: ExperimentConfig, rng) -> TrialReport:
    if config.operator.get("kind") != "haar_multiplier":
        raise ConfigError("the lower bound needs a Haar multiplier")
    T = build_operator(config, rng)
    beta = int(config.params.get("beta", 1))
    b = config_symbol(config, rng)
    ws = tuple(config_weight(config, rng, pj)[0] for pj in config.p)
    data = lower_bound_data(T, b, WeightVector(ws, config.exponents), beta)
    tol = config.tolerance
    ok = (data["pointwise_slack"] >= -1e-12 and data["chain_slack"] >= -tol * max(1.0, data["measured_C"])
          and data["recovered_oscillation"] <= data["oscillation_bound"] * (1 + 1e-12)
          and data["nu_identity_error"] <= 1e-12)
    data["min_slack"] = min(data["pointwise_slack"], data["chain_slack"])
    return TrialReport(0, bool(ok), data, "" if ok else "lower-bound chain violated")


def check_lower_bound(config: ExperimentConfig) -> list[TrialReport]:
    return run_trials(config, lower_bound_trial)


# -- maximal truncation -------------------------------------------------------

def maximal_trial_data(T, fs) -> dict | None:
    """Pointwise ``M(Tf) - T_# f`` and the weak-type ratio; ``None`` for zero inputs."""
    den = float(np.prod([lp_norm(f, 1) for f in fs]))
    if den == 0:
        return None
    ts = maximal_truncation(T, fs)
    slack = float((dyadic_maximal(T(*fs)).values - ts.values).min())
    weak = weak_lp_norm(ts, 1.0 / T.m)
    return {"min_slack": slack, "weak_norm": weak, "ratio": weak / den}


def maximal_trial(config: ExperimentConfig, rng) -> TrialReport:
    T = build_operator(config, rng)
    fs = config_inputs(config, rng)
    data = maximal_trial_data(T, fs)
    if data is None:
        return TrialReport(0, True, {}, "zero input", skipped=True)
    ok = data["min_slack"] >= -1e-12
    return TrialReport(0, bool(ok), data, "" if ok else "T_# exceeds M(Tf)")


def check_maximal(config: ExperimentConfig) -> list[TrialReport]:
    return run_trials(config, maximal_trial)


CHECKS = {
    "check-domination": check_domination,
    "check-bloom": check_bloom,
    "check-lowerbound": check_lower_bound,
    "check-cauchy": check_cauchy,
    "check-conjugation": check_conjugation,
    "check-maximal": check_maximal,
}
