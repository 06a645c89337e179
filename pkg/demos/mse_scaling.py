"""
Mean squared error against batch size
=====================================

The estimator's MSE should fall like 1/m. The theoretical bound holds with a
lot of room, since it is built from worst-case constants.
"""

from drmpg import DistortionFn, chain_mdp
from drmpg.harness import mse_study, named_policy, scaling_ratios

mdp = chain_mdp()
theta = named_policy("random:0.5", mdp, 0)
g = DistortionFn("logarithmic", 1.0)

for estimator in ("onpolicy", "offpolicy"):
    rows = mse_study(mdp, theta, g, 0.9, [16, 64, 256], batches=300, seed=0, estimator=estimator)
    print(estimator)
    for r in rows:
        print(f"  m={r['m']:4d}  mse={r['empirical_mse']:.3e}  bound={r['lemma_bound']:.3e}")
    print("  mse(m)/mse(4m):", {m: round(v, 2) for m, v in scaling_ratios(rows).items()})
