"""
Exact gradients on a tiny chain
===============================

The chain MDP has 17 possible episodes, so the return distribution and the
DRM gradient can be computed exactly. We compare the exact gradient with
finite differences and with the average of many sampled estimates.
"""

import numpy as np

from drmpg import DistortionFn, SoftmaxPolicy, chain_mdp, grad_onpolicy, rollout_batch
from drmpg.mdp import tight_return_bound
from drmpg.oracle import enumerate_episodes, exact_drm, exact_grad, finite_diff_grad

gamma = 0.9
mdp = chain_mdp()
atlas = enumerate_episodes(mdp, gamma)
print(len(atlas), "episodes, returns", np.round(np.sort(atlas.returns), 3))

policy = SoftmaxPolicy(np.array([[0.0, 0.0], [0.5, -0.5], [0.2, 0.1]]))
g = DistortionFn("exponential", 1.0)
print("exact DRM:", round(exact_drm(atlas, policy, g), 5))

exact = exact_grad(atlas, policy, g)
fd = finite_diff_grad(atlas, policy, g)
print("exact grad:        ", np.round(exact, 5))
print("finite differences:", np.round(fd, 5))

# sampled estimates carry an O(1/m) bias; the averages below also carry Monte Carlo noise
M_r = tight_return_bound(mdp, gamma)
rng = np.random.default_rng(1)
for m in (8, 64, 512):
    est = np.mean([grad_onpolicy(rollout_batch(mdp, policy, m, gamma, rng), g, M_r).grad
                   for _ in range(300)], axis=0)
    print(f"m={m:4d} mean of 300 estimates:", np.round(est, 4),
          " error", round(float(np.linalg.norm(est - exact)), 4))
