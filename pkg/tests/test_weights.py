import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bloomlab import (
    BloomSetup, DomainError, DyadicGrid, ExponentVector, GridFunction, WeightVector,
    ap_characteristic, bmo_norm, conjugate_weight, dual_weight, holder_combination,
    john_nirenberg_check, multilinear_ap_characteristic, reverse_holder_exponent,
    theorem_constant, weight_product, weighted_bmo_norm,
)
from bloomlab.verify import random_bmo_symbol, random_weight
from bloomlab.weights import dual_weight_vector


def all_cubes(g):
    for k in range(g.depth + 1):
        yield from g.cubes(k)


def ap_oracle(w, p):
    # exhaustive loop over cubes, plain means
    pp = p / (p - 1)
    best = 0.0
    for Q in all_cubes(w.grid):
        v = w.values[w.grid.leaf_mask(Q)]
        best = max(best, v.mean() * np.mean(v ** (1 - pp)) ** (p - 1))
    return best


def multi_ap_oracle(ws, ps):
    p = 1 / sum(1 / q for q in ps)
    nu = np.prod([w.values ** (p / q) for w, q in zip(ws, ps)], axis=0)
    g = ws[0].grid
    best = 0.0
    for Q in all_cubes(g):
        mask = g.leaf_mask(Q)
        val = nu[mask].mean() ** (1 / p)
        for w, q in zip(ws, ps):
            qq = q / (q - 1)
            val *= np.mean(w.values[mask] ** (1 - qq)) ** (1 / qq)
        best = max(best, val)
    return best**p


def bmo_oracle(b, nu=None):
    g = b.grid
    best = 0.0
    for Q in all_cubes(g):
        mask = g.leaf_mask(Q)
        v = b.values[mask]
        osc = np.abs(v - v.mean()).sum() * g.leaf_measure
        mass = (nu.values[mask].sum() * g.leaf_measure) if nu is not None else Q.measure
        best = max(best, osc / mass)
    return best


G1 = DyadicGrid(1, 1)


# -- single-weight characteristic ---------------------------------------------

def test_ap_examples():
    g = DyadicGrid(1, 4)
    assert ap_characteristic(GridFunction.constant(g, 1.0), 2) == pytest.approx(1.0)
    assert ap_characteristic(GridFunction.constant(g, 7.3), 3.5) == pytest.approx(1.0)
    w = GridFunction(G1, [1.0, 4.0])
    assert ap_characteristic(w, 2) == pytest.approx(25 / 16, rel=1e-14)
    assert ap_oracle(w, 2) == pytest.approx(25 / 16, rel=1e-14)
    with pytest.raises(DomainError):
        ap_characteristic(w, 1.0)
    with pytest.raises(DomainError):
        ap_characteristic(GridFunction(G1, [1.0, 0.0]), 2)


@given(st.integers(0, 2**32 - 1), st.floats(1.1, 6.0))
@settings(max_examples=40, deadline=None)
def test_ap_oracle_and_jensen(seed, p):
    g = DyadicGrid(1, 5, (0.25,))
    w = random_weight(g, seed, 0.8)
    a = ap_characteristic(w, p)
    assert a >= 1 - 1e-12
    assert a == pytest.approx(ap_oracle(w, p), rel=1e-10)


# -- multilinear characteristic -----------------------------------------------

def test_weight_product_examples(rng):
    g = DyadicGrid(1, 3)
    one = GridFunction.constant(g, 1.0)
    assert np.allclose(weight_product(WeightVector((one, one), ExponentVector((2, 3)))).values, 1)
    w = random_weight(g, 3, 0.5)
    assert np.allclose(weight_product(WeightVector((w,), ExponentVector((2.5,)))).values, w.values)
    wv = WeightVector((GridFunction(G1, [1.0, 4.0]), GridFunction.constant(G1, 1.0)), ExponentVector((2, 2)))
    assert np.allclose(weight_product(wv).values, [1.0, 2.0])


def test_multilinear_examples():
    one = GridFunction.constant(DyadicGrid(2, 2), 1.0)
    assert multilinear_ap_characteristic(WeightVector((one, one), ExponentVector((2, 5)))) == pytest.approx(1)
    wv = WeightVector((GridFunction(G1, [1.0, 4.0]), GridFunction.constant(G1, 1.0)), ExponentVector((2, 2)))
    assert multilinear_ap_characteristic(wv) == pytest.approx(1.5 * np.sqrt(0.625), rel=1e-14)
    assert multilinear_ap_characteristic(wv) == pytest.approx(1.185854, abs=1e-6)


@given(st.integers(0, 2**32 - 1), st.floats(1.2, 5.0), st.floats(1.2, 5.0),
       st.floats(0.1, 10.0), st.floats(0.1, 10.0))
@settings(max_examples=30, deadline=None)
def test_multilinear_oracle_and_homogeneity(seed, p1, p2, c1, c2):
    g = DyadicGrid(1, 5)
    w1, w2 = random_weight(g, [seed, 1], 0.7), random_weight(g, [seed, 2], 0.7)
    ex = ExponentVector((p1, p2))
    val = multilinear_ap_characteristic(WeightVector((w1, w2), ex))
    assert val >= 1 - 1e-12
    assert val == pytest.approx(multi_ap_oracle((w1, w2), (p1, p2)), rel=1e-10)
    scaled = multilinear_ap_characteristic(WeightVector((w1 * c1, w2 * c2), ex))
    assert scaled == pytest.approx(val, rel=1e-10)


def test_exponent_identities():
    for ps in [(2.0, 2.0), (1.5, 3.0, 7.0), (4.0,)]:
        ex = ExponentVector(ps)
        assert sum(1 / q for q in ex.duals) == pytest.approx((ex.m * ex.p - 1) / ex.p, abs=1e-12)
    with pytest.raises(DomainError):
        ExponentVector((1.0, 2.0))


# -- duals and conjugation ------------------------------------------------------

def test_dual_weight():
    g = DyadicGrid(1, 4)
    w = random_weight(g, 11, 1.0)
    assert np.allclose(dual_weight(GridFunction.constant(g, 1.0), 3).values, 1)
    assert np.allclose(dual_weight(w, 2).values, 1 / w.values, rtol=1e-14)
    for p in (1.3, 2.0, 4.5):
        back = dual_weight(dual_weight(w, p), p / (p - 1))
        assert np.abs(back.values - w.values).max() < 1e-12 * w.values.max()


def test_dual_vector_product_identity():
    g = DyadicGrid(1, 5)
    for seed in range(10):
        ex = ExponentVector((1.5 + seed % 3, 2.5))
        wv = WeightVector((random_weight(g, [seed, 1], 0.5), random_weight(g, [seed, 2], 0.5)), ex)
        lhs = weight_product(dual_weight_vector(wv)).values
        rhs = weight_product(wv).values ** (1 / (1 - ex.m * ex.p))
        assert np.abs(lhs / rhs - 1).max() < 1e-12


def test_conjugate_weight():
    g = DyadicGrid(1, 4)
    w, lam = random_weight(g, 1, 0.5), random_weight(g, 2, 0.5)
    b = random_bmo_symbol(g, 3, 1.0)
    assert np.array_equal(conjugate_weight(w, b, 0).values, w.values)
    assert np.array_equal(conjugate_weight(w, b * 0.0, 1 + 2j).values, w.values)
    z = 0.3 - 0.7j
    r = conjugate_weight(w, b, z, 2.5).values / conjugate_weight(lam, b, z, 2.5).values
    assert np.allclose(r, w.values / lam.values, rtol=1e-13)
    assert np.allclose(conjugate_weight(w, b, z, 2.0).values, np.exp(2 * 0.3 * b.values) * w.values)


# -- BMO ------------------------------------------------------------------------

def test_bmo_examples():
    for depth in (1, 3, 6):
        g = DyadicGrid(1, depth)
        chi = GridFunction(g, (np.arange(g.n_leaves) < g.n_leaves // 2).astype(float))
        assert bmo_norm(chi) == pytest.approx(0.5)
        assert bmo_norm(GridFunction.constant(g, 2.0)) == 0


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10))
@settings(max_examples=30, deadline=None)
def test_weighted_bmo_oracle_and_scaling(seed, c):
    g = DyadicGrid(2, 3)
    rng = np.random.default_rng(seed)
    b = GridFunction(g, rng.normal(size=g.n_leaves))
    nu = random_weight(g, seed, 0.5)
    val = weighted_bmo_norm(b, nu)
    assert val == pytest.approx(bmo_oracle(b, nu), rel=1e-12)
    assert weighted_bmo_norm(b, nu * c) == pytest.approx(val / c, rel=1e-12)
    assert bmo_norm(b + 5.0) == pytest.approx(bmo_norm(b), rel=1e-12)


def test_john_nirenberg_examples():
    g = DyadicGrid(1, 4)
    assert john_nirenberg_check(GridFunction.constant(g, 3.0)) == (0.0, 1.0)
    chi = GridFunction(g, (np.arange(16) < 8).astype(float))
    prev = 1.0
    for t in (0.5, 1.0, 2.0, 4.0):
        _, avg = john_nirenberg_check(chi * t)
        # root: half the cube sees |b - t/2| = t/2 on each side
        assert avg == pytest.approx(np.exp(t / 2), rel=1e-14)
        assert avg > prev
        prev = avg
    b = random_bmo_symbol(g, 5, 1.0)
    assert john_nirenberg_check(b * 1e-8)[1] == pytest.approx(1.0, abs=1e-7)


def test_reverse_holder():
    g = DyadicGrid(1, 5)
    assert reverse_holder_exponent(GridFunction.constant(g, 2.0)) == 64.0
    q = reverse_holder_exponent(random_weight(g, 1, 1.5))
    assert 1.0 <= q < 64.0


# -- Bloom setup and the theorem constant ----------------------------------------

def _constant_oracle(mus, lams, ps, I):
    ps = list(ps)
    duals = [p / (p - 1) for p in ps]
    free = [j for j in range(len(ps)) if j + 1 not in I]
    q = 1 / sum(1 / ps[j] for j in free) if free else 1 / sum(1 / p for p in ps)
    c = 1.0
    for i in I:
        p = ps[i - 1]
        c *= ap_oracle(mus[i - 1], p) ** max(1, 1 / (p - 1))
        c *= ap_oracle(lams[i - 1], p) ** (max(p, q, *duals) / p)
    if free:
        c *= multi_ap_oracle([mus[j] for j in free], [ps[j] for j in free]) ** (max(q, *duals) / q)
    return c


def _setup(g, ps, I, seed, strength=0.6):
    ex = ExponentVector(ps)
    mus = [random_weight(g, [seed, 1, j], strength) for j in range(len(ps))]
    lams = [random_weight(g, [seed, 2, j], strength) if j + 1 in I else mus[j] for j in range(len(ps))]
    return BloomSetup(ex, I, WeightVector(mus, ex), WeightVector(lams, ex)), mus, lams


@pytest.mark.parametrize("ps,I", [((2.0, 2.0), (1,)), ((2.0, 3.0), (1, 2)), ((1.5, 4.0, 3.0), (2,)),
                                  ((2.0, 2.0), ())])
def test_theorem_constant_reimplementation(ps, I):
    g = DyadicGrid(1, 5)
    for seed in range(3):
        setup, mus, lams = _setup(g, ps, I, seed)
        assert theorem_constant(setup) == pytest.approx(_constant_oracle(mus, lams, ps, I), rel=1e-10)


def test_theorem_constant_cases():
    g = DyadicGrid(1, 4)
    one = GridFunction.constant(g, 1.0)
    ex = ExponentVector((2.0, 3.0))
    flat = WeightVector((one, one), ex)
    assert theorem_constant(BloomSetup(ex, (1,), flat, flat)) == pytest.approx(1.0)
    # no commuted slot: the multilinear characteristic raised to max(p, p'_j)/p
    setup, mus, _ = _setup(g, (2.0, 3.0), (), 4)
    p = ex.p
    expected = multilinear_ap_characteristic(setup.mu) ** (max(p, 2.0, 1.5) / p)
    assert theorem_constant(setup) == pytest.approx(expected, rel=1e-12)
    # one commuted slot with trivial second slot
    ex2 = ExponentVector((2.0, 2.0))
    mu1, lam1 = random_weight(g, 8, 0.7), random_weight(g, 9, 0.7)
    s = BloomSetup(ex2, (1,), WeightVector((mu1, one), ex2), WeightVector((lam1, one), ex2))
    expected = ap_characteristic(mu1, 2) * ap_characteristic(lam1, 2) ** (2 / 2)
    assert theorem_constant(s) == pytest.approx(expected, rel=1e-12)


def test_bloom_setup_validation_and_roundtrip(tmp_path):
    g = DyadicGrid(1, 3)
    setup, mus, lams = _setup(g, (2.0, 3.0), (1,), 0)
    assert np.allclose(setup.bloom_weight(1).values, (mus[0].values / lams[0].values) ** 0.5)
    assert setup.free_slots == (2,) and setup.reduced_exponents.p_list == (3.0,)
    setup.save(tmp_path / "s.json")
    back = BloomSetup.load(tmp_path / "s.json")
    assert back.commuted == (1,)
    assert np.array_equal(back.lam.weights[0].values, lams[0].values)
    ex = setup.exponents
    with pytest.raises(DomainError):
        BloomSetup(ex, (1,), WeightVector(mus, ex), WeightVector((lams[0], lams[0] * 2.0), ex))
    with pytest.raises(DomainError):
        BloomSetup(ex, (3,), WeightVector(mus, ex), WeightVector(mus, ex))


# -- Hölder combination ------------------------------------------------------------

@given(st.integers(0, 2**32 - 1), st.floats(1.2, 6.0), st.floats(1.2, 6.0), st.floats(1.2, 6.0))
@settings(max_examples=40, deadline=None)
def test_holder_combination(seed, p1, p2, p3):
    g = DyadicGrid(1, 6)
    lam = random_weight(g, [seed, 0], 0.8)
    wv = WeightVector((random_weight(g, [seed, 1], 0.8), random_weight(g, [seed, 2], 0.8)),
                      ExponentVector((p2, p3)))
    lhs, rhs = holder_combination([lam], [p1], wv)
    assert np.log(rhs) - np.log(lhs) >= -1e-10
    assert lhs == pytest.approx(multi_ap_oracle([lam, *wv.weights], [p1, p2, p3]), rel=1e-10)
