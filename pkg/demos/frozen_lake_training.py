"""
Risk-averse training on a slippery lake
=======================================

We train the order-statistic DRM gradient method and plain REINFORCE on the
6x9 Frozen Lake grid and compare evaluation returns. This is a shortened run
(N=2000); the full preset uses N=10000.
"""

import numpy as np

from drmpg import DistortionFn, TrainConfig, drm_onp_lr, frozen_lake, reinforce
from drmpg.harness import evaluate_policy
from drmpg.mdp import feasible_return_bound

lake = frozen_lake()
print(lake.name, lake.n_states - 1, "cells, episode cap", lake.episode_cap)

g = DistortionFn("logarithmic", 1.0)
M_r = feasible_return_bound(lake, 0.99)
cfg = TrainConfig(N=2000, gamma=0.99, g=g, M_r=M_r, seed=0)
print(f"m={cfg.m}, alpha={cfg.alpha:.3f}, M_r={M_r:.2f}")

init = np.zeros(lake.n_params)
for name, algo in (("DRM-OnP-LR", drm_onp_lr), ("REINFORCE", reinforce)):
    trace = algo(lake, init, cfg)
    ret0, drm0 = evaluate_policy(lake, trace.thetas[0], g, 0.99, 1000, 99)
    ret1, drm1 = evaluate_policy(lake, trace.theta_final, g, 0.99, 1000, 99)
    print(f"{name:11s} mean return {ret0:7.2f} -> {ret1:7.2f}   DRM {drm0:7.2f} -> {drm1:7.2f}")
