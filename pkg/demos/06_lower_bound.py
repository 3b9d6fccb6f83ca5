"""Recover the oscillation of a symbol from commutator evaluations on Haar test functions."""

from bloomlab import DyadicGrid, ExponentVector, HaarMultiplierSpec, WeightVector, constant_epsilon
from bloomlab.verify import lower_bound_data, random_bmo_symbol, random_weight

g = DyadicGrid(1, 6)
T = HaarMultiplierSpec(g, constant_epsilon(g), ((0,), (0,), (0,)))
b = random_bmo_symbol(g, 6, 1.0)
wv = WeightVector((random_weight(g, 1, 0.4), random_weight(g, 2, 0.4)), ExponentVector((2.0, 3.0)))

data = lower_bound_data(T, b, wv)
print("pointwise slack of |[b,T]f| >= c|b - <b>_J|:", data["pointwise_slack"])
print("measured constant:", round(data["measured_C"], 4))
print("recovered oscillation", round(data["recovered_oscillation"], 4),
      "<= bound", round(data["oscillation_bound"], 4))
print("dual product weight identity error:", data["nu_identity_error"])
