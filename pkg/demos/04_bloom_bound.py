"""Two-weight bound for a first-order commutator, with its sparse-form chain."""

from bloomlab.verify import ExperimentConfig, check_bloom, summarize

config = ExperimentConfig(depth=8, trials=10, seed=4)
reports = check_bloom(config)
for r in reports[:3]:
    m = r.metrics
    print(f"trial {r.trial}: lhs {m['lhs']:.4f} rhs {m['rhs']:.4f} ratio {r.ratio:.4f} "
          f"C1 {m['C1_1']:.2f} chain slack {m['chain_slack']:.3g}")
s = summarize(reports)
print("all trials passed:", s["passed"], "max ratio:", round(s["max_ratio"], 4))
