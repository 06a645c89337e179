"""
Distortion functions and risk measures
======================================

A distortion g reweights the tail probabilities of a return before taking
the expectation. Concave g puts more weight on bad outcomes.
"""

import numpy as np

from drmpg import DistortionFn, all_families
from drmpg.drm import DiscreteDist, drm_empirical, drm_exact

# evaluate every family on a grid
s = np.linspace(0, 1, 5)
for g in all_families():
    print(f"{str(g):22s}", np.round(g(s), 3), " g'(0) =", round(g.right_deriv_zero(), 3))

# a lottery: lose 1 with probability 0.3, win 2 otherwise
dist = DiscreteDist(np.array([-1.0, 2.0]), np.array([0.3, 0.7]))
print("\nmean:", dist.mean())
for g in all_families():
    print(f"DRM under {str(g):22s} {drm_exact(dist, g):.4f}")

# the sample version is an L-statistic and approaches the exact value
rng = np.random.default_rng(0)
sample = rng.choice(dist.values, size=20000, p=dist.probs)
g = DistortionFn("dualpower", 2)
print(f"\ndual power, exact {drm_exact(dist, g):.4f}, from 20000 draws {drm_empirical(sample, g):.4f}")
