"""Bilinear Haar multiplier, its commutators and the maximal truncation."""

import numpy as np

from bloomlab import (
    Commutator, CommutatorSpec, DyadicGrid, GridFunction, HaarMultiplierSpec,
    build_iterated_commutator, dyadic_maximal, haar_function, maximal_truncation,
    random_sign_epsilon,
)

# the smallest nontrivial example: one cube, one term
g1 = DyadicGrid(1, 1)
h0 = haar_function(g1, g1.root, 0)
T1 = HaarMultiplierSpec(g1, [np.ones(1)], ((0,), (0,), (1,)))
b = GridFunction(g1, [1.0, 0.0])
print("T(h, h) =", T1(h0, h0).values)
print("[b, T]_1(h, h) =", Commutator(T1, b, 1)(h0, h0).values)

# a random bilinear multiplier on 256 cells
rng = np.random.default_rng(0)
g = DyadicGrid(1, 8)
T = HaarMultiplierSpec(g, random_sign_epsilon(g, rng), ((0,), (0,), (0,)))
f1, f2, b1, b2 = (GridFunction(g, rng.normal(size=g.n_leaves)) for _ in range(4))
K = build_iterated_commutator(CommutatorSpec(T, (1, 1), ((b1,), (b2,))))
four = b1 * b2 * T(f1, f2) - b2 * T(b1 * f1, f2) - b1 * T(f1, b2 * f2) + T(b1 * f1, b2 * f2)
print("nested vs expanded commutator:", (K(f1, f2) - four).max_abs())

sharp = maximal_truncation(T, [f1, f2])
print("min of M(Tf) - T_# f:", (dyadic_maximal(T(f1, f2)) - sharp).values.min())
