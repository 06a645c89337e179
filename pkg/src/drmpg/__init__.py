"""Policy-gradient methods for distortion risk measures in episodic MDPs."""
from .distortion import DistortionFn, Family, all_families
from .drm import DiscreteDist, drm_empirical, drm_exact, edf
from .estimators import (GradReport, cdf_grad_onpolicy, grad_offpolicy, grad_onpolicy,
                         grad_reinforce)
from .mdp import (Episode, EpisodeBatch, EpisodicMdp, SoftmaxPolicy, chain_mdp,
                  feasible_return_bound, frozen_lake, rollout, rollout_batch,
                  tight_return_bound)
from .optimizer import (TrainConfig, TrainTrace, drm_offp_lr, drm_onp_lr,
                        pick_random_iterate, reinforce)

__version__ = "0.1.0"
