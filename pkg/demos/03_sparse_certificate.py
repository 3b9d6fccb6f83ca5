"""Build a sparse domination certificate for a bilinear commutator and re-check it from JSON."""

import json
import tempfile
from pathlib import Path

import numpy as np

from bloomlab import DyadicGrid, HaarMultiplierSpec, random_sign_epsilon, sparse_dominate_commutator
from bloomlab.sparse import verify_certificate_dict
from bloomlab.verify import random_bmo_symbol, random_inputs

rng = np.random.default_rng(3)
g = DyadicGrid(1, 8)
T = HaarMultiplierSpec(g, random_sign_epsilon(g, rng), ((0,), (0,), (0,)))
bs = {1: random_bmo_symbol(g, rng, 1.0), 2: random_bmo_symbol(g, rng, 1.0)}
fs = random_inputs(g, rng, 2)

cert = sparse_dominate_commutator(T, bs, fs)
print(f"{len(cert.collection)} cubes, constant {cert.constant:.3f}, min slack {cert.min_slack:.3f}")
print("1/2-sparse and dominated:", cert.passed())
for step in cert.collection.provenance["trace"][:3]:
    print("  cube", step["cube"], "C =", round(step["C"], 3), "stopping cubes:", step["stopping"])

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "certificate.json"
    cert.save(path)
    print("re-verified from disk:", bool(verify_certificate_dict(json.loads(path.read_text()))))
