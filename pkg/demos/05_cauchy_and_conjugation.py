"""Commutators as derivatives of the conjugated family, and stability of conjugated weights."""

from bloomlab.verify import ExperimentConfig, check_cauchy, check_conjugation

for orders in ([1, 0], [1, 1]):
    reps = check_cauchy(ExperimentConfig(depth=6, trials=3, params={"orders": orders}))
    print(f"orders {orders}:", [(f"{r.metrics['rel_error']:.1e}", round(r.metrics["order"], 3)) for r in reps])

reps = check_conjugation(ExperimentConfig(depth=6, trials=3))
for r in reps:
    print(f"trial {r.trial}: [v]/[w] at t=1 {r.metrics['ratio_tmax']:.3f}, "
          f"at t=2^-10 {r.metrics['ratio_tmin']:.5f}, exponential average {r.metrics['jn_max_average']:.3f}")
