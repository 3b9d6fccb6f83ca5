import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bloomlab import (
    Cube, DomainError, DyadicGrid, GridFunction, HaarMultiplierSpec, ParaproductSpec,
    adapted_sparse_apply, augment_for_symbol, constant_epsilon, cz_stopping_cubes, gamma_term,
    haar_function, make_collection, random_sign_epsilon, sparse_dominate_commutator,
    sparse_operator, verify_sparsity,
)
from bloomlab.sparse import (
    SparseCollection, all_gammas, collection_from_certificate, oscillation_domination,
    verify_certificate_dict,
)
from bloomlab.verify import random_bmo_symbol

from conftest import rand_fn

G1 = DyadicGrid(1, 1)
ROOT = Cube(0, (0,))
LEFT, RIGHT = Cube(1, (0,)), Cube(1, (1,))


def mask(g, *cubes):
    m = np.zeros(g.n_leaves, dtype=bool)
    for Q in cubes:
        m |= g.leaf_mask(Q)
    return m


# -- sparsity ---------------------------------------------------------------------

def test_verify_sparsity_examples():
    g = DyadicGrid(1, 3)
    S = SparseCollection(g, [ROOT], 1.0, {ROOT: mask(g, ROOT)})
    assert verify_sparsity(S) and verify_sparsity(S, 0.3)
    good = SparseCollection(g, [ROOT, LEFT], 0.5, {ROOT: mask(g, RIGHT), LEFT: mask(g, LEFT)})
    assert verify_sparsity(good)
    bad = SparseCollection(g, [ROOT, LEFT], 0.5, {ROOT: mask(g, LEFT), LEFT: mask(g, LEFT)})
    check = verify_sparsity(bad)
    assert not check and set(check.cubes) == {ROOT, LEFT} and "overlap" in check.message
    thin = SparseCollection(g, [ROOT], 0.5, {ROOT: mask(g, Cube(2, (0,)))})
    assert not verify_sparsity(thin)
    outside = SparseCollection(g, [LEFT], 0.5, {LEFT: mask(g, RIGHT)})
    assert not verify_sparsity(outside)


def test_canonical_witness_is_disjoint(rng):
    g = DyadicGrid(2, 4)
    cubes = [Cube(k, tuple(rng.integers(0, 2**k, size=2))) for k in range(5) for _ in range(3)]
    S = make_collection(g, cubes)
    owners = sum(S.witness[Q].astype(int) for Q in S.cubes)
    assert owners.max() == 1
    assert verify_sparsity(S, S.realized_eta())


# -- stopping cubes -----------------------------------------------------------------

def _cz_oracle(g, E, Q0, lam):
    dense = [Q for k in range(Q0.level, g.depth + 1) for Q in g.cubes(k)
             if Q0.contains(Q) and E[g.leaf_mask(Q)].mean() > lam]
    return {P for P in dense if not any(R != P and R.contains(P) for R in dense)}


def test_cz_examples():
    g = DyadicGrid(1, 3)
    assert cz_stopping_cubes(g, np.zeros(8, bool), ROOT, 0.25) == []
    E = mask(g, Cube(3, (0,)))
    assert cz_stopping_cubes(g, E, ROOT, 0.25) == [Cube(2, (0,))]
    assert cz_stopping_cubes(g, np.ones(8, bool), ROOT, 0.9) == [ROOT]
    for lam in (0.0, 1.0, 1.5):
        with pytest.raises(DomainError):
            cz_stopping_cubes(g, E, ROOT, lam)


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
@settings(max_examples=40, deadline=None)
def test_cz_against_scan(seed, lam):
    rng = np.random.default_rng(seed)
    g = DyadicGrid(2, 3)
    E = rng.random(g.n_leaves) < rng.uniform(0.02, 0.3)
    Q0 = Cube(1, (1, 0))
    E &= g.leaf_mask(Q0)
    P = cz_stopping_cubes(g, E, Q0, lam)
    assert set(P) == _cz_oracle(g, E, Q0, lam)
    for p in P:
        assert lam * p.measure <= E[g.leaf_mask(p)].sum() * g.leaf_measure
    if E.sum() * g.leaf_measure <= lam * Q0.measure:
        assert sum(p.measure for p in P) <= E.sum() * g.leaf_measure / lam + 1e-15
    assert not np.any(E & ~mask(g, *P))


# -- gamma terms and the adapted sparse operators ------------------------------------

def test_gamma_examples():
    g = DyadicGrid(1, 2)
    chi = GridFunction(g, [1.0, 1.0, 0.0, 0.0])
    one = GridFunction.constant(g, 1.0)
    assert np.allclose(gamma_term(chi, one, ROOT, 2).values, 0.5)
    assert np.allclose(gamma_term(chi, one, ROOT, 1).values, 0.5)
    for gam in (1, 2):
        assert np.allclose(gamma_term(one * 3.0, chi, ROOT, gam).values, 0)
        assert np.allclose(gamma_term(chi, one * 0.0, ROOT, gam).values, 0)
    with pytest.raises(DomainError):
        gamma_term(chi, one, ROOT, 3)


def _adapted_oracle(S, bs, gammas, fs, I):
    g = S.grid
    out = np.zeros(g.n_leaves)
    for Q in S.cubes:
        m = g.leaf_mask(Q)
        term = np.where(m, 1.0, 0.0)
        for j, f in enumerate(fs, start=1):
            if j in I:
                s = list(I).index(j)
                term = term * gamma_term(bs[s], f, Q, gammas[s]).values
            else:
                term = term * np.abs(f.values[m]).mean()
        out += term
    return out


def test_adapted_examples():
    g = DyadicGrid(1, 2)
    one = GridFunction.constant(g, 1.0)
    chi = GridFunction(g, [1.0, 1.0, 0.0, 0.0])
    empty = make_collection(g, [])
    assert np.allclose(sparse_operator(empty, [one, one]).values, 0)
    root = make_collection(g, [ROOT])
    assert np.allclose(sparse_operator(root, [one, one]).values, 1)
    assert np.allclose(adapted_sparse_apply(root, [chi], [2], [one], [1]).values, 0.5)
    with pytest.raises(DomainError):
        adapted_sparse_apply(root, [chi], [2, 1], [one], [1])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_adapted_oracle_monotone_homogeneous(seed):
    rng = np.random.default_rng(seed)
    g = DyadicGrid(1, 5)
    cubes = [Cube(k, (int(rng.integers(0, 2**k)),)) for k in range(6) for _ in range(2)]
    S = make_collection(g, cubes)
    S_big = make_collection(g, cubes + [Cube(2, (1,)), Cube(4, (3,))])
    fs = [rand_fn(g, rng) for _ in range(3)]
    bs = [rand_fn(g, rng), rand_fn(g, rng)]
    I = (1, 3)
    c = float(rng.uniform(0.1, 5))
    for gam in all_gammas(2):
        out = adapted_sparse_apply(S, bs, gam, fs, I).values
        assert np.allclose(out, _adapted_oracle(S, bs, gam, fs, I), atol=1e-12)
        assert np.all(adapted_sparse_apply(S_big, bs, gam, fs, I).values >= out - 1e-12)
        for j in range(3):
            scaled = list(fs)
            scaled[j] = fs[j] * c
            assert np.allclose(adapted_sparse_apply(S, bs, gam, scaled, I).values, c * out, rtol=1e-12)


# -- oscillation augmentation ----------------------------------------------------------

def test_augment_examples():
    g = DyadicGrid(1, 4)
    S = make_collection(g, [ROOT, Cube(2, (1,))])
    St = augment_for_symbol(S, GridFunction.constant(g, 2.0))
    assert St.cubes == S.cubes and St.provenance["C1"] == 0
    h = haar_function(g, ROOT, 0)
    St = augment_for_symbol(make_collection(g, [ROOT]), h)
    assert St.cubes == [ROOT] and St.provenance["C1"] <= 2


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_augment_domination_and_idempotence(seed):
    rng = np.random.default_rng(seed)
    g = DyadicGrid(1, 7)
    b = random_bmo_symbol(g, rng, 1.0, density=0.4)
    S = make_collection(g, [ROOT, Cube(3, (2,)), Cube(5, (17,))])
    St = augment_for_symbol(S, b)
    assert set(S.cubes) <= set(St.cubes)
    assert verify_sparsity(St) and St.eta > 0
    # from the root alone the stopping families nest, so the result is 1/2-sparse
    assert verify_sparsity(augment_for_symbol(make_collection(g, [ROOT]), b), 0.5)
    C1 = St.provenance["C1"]
    assert np.isfinite(C1)
    _, slack = oscillation_domination(S, St, b, C1)
    assert slack >= -1e-12
    again = augment_for_symbol(St, b)
    _, slack2 = oscillation_domination(St, again, b, again.provenance["C1"])
    assert slack2 >= -1e-12
    _, slack3 = oscillation_domination(S, again, b, C1)
    assert slack3 >= -1e-12


# -- commutator certificates -------------------------------------------------------------

def test_certificate_hand_example():
    T = HaarMultiplierSpec(G1, constant_epsilon(G1), ((0,), (0,), (1,)))
    h0 = haar_function(G1, G1.root, 0)
    chi = GridFunction(G1, [1.0, 0.0])
    cert = sparse_dominate_commutator(T, {1: chi, 2: chi}, [h0, h0])
    assert ROOT in cert.collection
    assert cert.passed(1e-12)
    # the iterated commutator is (b - 1/2)^2 T(h0, h0) = 1/4, the (1,1) term at the root is 1/4 as well
    lhs = 0.25
    assert cert.constant * 0.25 >= lhs - 1e-15


def test_certificate_constant_symbols(rng):
    g = DyadicGrid(1, 6)
    T = HaarMultiplierSpec(g, random_sign_epsilon(g, rng), ((0,), (0,), (0,)))
    fs = [rand_fn(g, rng), rand_fn(g, rng)]
    const = GridFunction.constant(g, 1.7)
    cert = sparse_dominate_commutator(T, {1: const, 2: const}, fs)
    assert cert.passed()
    assert cert.provenance["lhs_max"] < 1e-12


@given(st.integers(0, 2**32 - 1), st.sampled_from(["multiplier", "paraproduct"]))
@settings(max_examples=15, deadline=None)
def test_certificate_invariants(seed, kind):
    rng = np.random.default_rng(seed)
    g = DyadicGrid(1, 7)
    eps = random_sign_epsilon(g, rng)
    if kind == "multiplier":
        T = HaarMultiplierSpec(g, eps, ((0,), (0,), (0,)))
    else:
        T = ParaproductSpec(g, random_bmo_symbol(g, rng, 1.0), eps, ((0,), (0,), (1,), (0,)))
    fs = [rand_fn(g, rng), rand_fn(g, rng)]
    bs = {1: random_bmo_symbol(g, rng, 1.0), 2: random_bmo_symbol(g, rng, 1.0)}
    cert = sparse_dominate_commutator(T, bs, fs)
    assert cert.failure is None
    assert verify_sparsity(cert.collection, 0.5)
    assert cert.min_slack >= -1e-10
    for step in cert.collection.provenance["trace"]:
        assert step["stopping_fraction"] < 0.5
        assert step["stopping_meet_complement"]
        assert step["E_leaves"] * 4 <= 2 ** (g.depth - Cube.from_key(step["cube"]).level)


def test_deficient_commutator(rng):
    g = DyadicGrid(1, 6)
    T = HaarMultiplierSpec(g, random_sign_epsilon(g, rng), ((0,), (0,), (0,), (0,)))
    fs = [rand_fn(g, rng) for _ in range(3)]
    cert = sparse_dominate_commutator(T, {2: random_bmo_symbol(g, rng, 1.0)}, fs)
    assert cert.passed()
    cert0 = sparse_dominate_commutator(T, {}, fs)
    assert cert0.passed()


def test_certificate_json_roundtrip(tmp_path, rng):
    g = DyadicGrid(1, 6)
    T = HaarMultiplierSpec(g, random_sign_epsilon(g, rng), ((0,), (0,), (0,)))
    bs = {1: random_bmo_symbol(g, rng, 1.0), 2: random_bmo_symbol(g, rng, 1.0)}
    cert = sparse_dominate_commutator(T, bs, [rand_fn(g, rng), rand_fn(g, rng)])
    path = tmp_path / "cert.json"
    cert.save(path)
    data = json.loads(path.read_text())
    assert verify_certificate_dict(data)
    S = collection_from_certificate(data)
    assert S.cubes == cert.collection.cubes
    assert all(np.array_equal(S.witness[Q], cert.collection.witness[Q]) for Q in S.cubes)
    data["schema"] = "other/0"
    assert not verify_certificate_dict(data)
