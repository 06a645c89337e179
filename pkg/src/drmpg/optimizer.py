"""Policy-gradient training loops for the DRM objective.

All three loops share one structure: at iteration ``k`` draw ``m`` fresh
episodes, estimate a gradient, and take the plain ascent step
``theta_{k+1} = theta_k + alpha * grad``. The returned parameter is an iterate
drawn uniformly from ``theta_1 .. theta_N``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable

import numpy as np

from .distortion import DistortionFn
from .drm import drm_empirical
from .estimators import grad_offpolicy, grad_onpolicy, grad_reinforce
from .mdp import EpisodeBatch, EpisodicMdp, SoftmaxPolicy, rollout_batch

MODES = ("onpolicy", "offpolicy", "reinforce")


@dataclass(frozen=True)
class TrainConfig:
    """Iteration count, batch size and step size of a training run.

    ``m`` and ``alpha`` default to ``ceil(sqrt(N))`` and ``1 / sqrt(N)``.
    """

    N: int
    m: int | None = None
    alpha: float | None = None
    gamma: float = 0.99
    g: DistortionFn = field(default_factory=DistortionFn.identity)
    M_r: float = 1.0
    seed: int = 0
    mode: str = "onpolicy"
    behavior_theta: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if int(self.N) < 1:
            raise ValueError("N must be >= 1")
        object.__setattr__(self, "N", int(self.N))
        if self.m is None:
            object.__setattr__(self, "m", math.ceil(math.sqrt(self.N)))
        if self.alpha is None:
            object.__setattr__(self, "alpha", 1.0 / math.sqrt(self.N))
        if int(self.m) < 1:
            raise ValueError("m must be >= 1")
        object.__setattr__(self, "m", int(self.m))
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not isinstance(self.g, DistortionFn):
            object.__setattr__(self, "g", DistortionFn.from_dict(self.g))

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "N": self.N, "m": self.m, "alpha": float(self.alpha), "gamma": float(self.gamma),
            "g": self.g.to_dict(), "M_r": float(self.M_r), "seed": int(self.seed),
            "mode": self.mode,
        }
        if self.behavior_theta is not None:
            out["behavior_theta"] = np.asarray(self.behavior_theta, dtype=float).ravel().tolist()
        return out


RECORD_FIELDS = ("iteration", "mean_return", "batch_drm", "grad_norm")


@dataclass
class TrainTrace:
    """Parameters ``theta_0 .. theta_N`` and per-iteration diagnostics."""

    thetas: np.ndarray
    records: dict[str, np.ndarray]
    wall_ms: np.ndarray
    R_index: int
    config: TrainConfig

    @property
    def theta_R(self) -> np.ndarray:
        return self.thetas[self.R_index]

    @property
    def theta_final(self) -> np.ndarray:
        return self.thetas[-1]

    @property
    def N(self) -> int:
        return self.thetas.shape[0] - 1


def random_iterate_index(N: int, rng) -> int:
    """Uniform draw from ``{1, ..., N}``; ``theta_0`` is never chosen."""
    if N < 1:
        raise ValueError("need at least one iterate")
    return int(np.random.default_rng(rng).integers(1, N + 1))


def pick_random_iterate(trace: TrainTrace, rng) -> np.ndarray:
    return trace.thetas[random_iterate_index(trace.N, rng)]


def _streams(seed: int):
    rollout_root, pick_root = np.random.SeedSequence(seed).spawn(2)
    return rollout_root, np.random.default_rng(pick_root)


def _run(mdp: EpisodicMdp, init_theta, cfg: TrainConfig,
         estimate: Callable[[SoftmaxPolicy, np.random.Generator], tuple[np.ndarray, EpisodeBatch]],
         callback=None) -> TrainTrace:
    theta = np.array(init_theta, dtype=float).reshape(mdp.n_states, mdp.n_actions)
    N = cfg.N
    thetas = np.empty((N + 1, theta.size))
    thetas[0] = theta.ravel()
    records = {k: np.empty(N) for k in RECORD_FIELDS}
    wall = np.empty(N)
    rollout_root, pick_rng = _streams(cfg.seed)
    seeds = rollout_root.spawn(N)
    for k in range(N):
        t0 = time.perf_counter()
        policy = SoftmaxPolicy(theta)
        grad, batch = estimate(policy, np.random.default_rng(seeds[k]))
        with np.errstate(over="ignore", invalid="ignore"):
            new_theta = theta + cfg.alpha * grad.reshape(theta.shape)
        if not np.all(np.isfinite(new_theta)):
            raise FloatingPointError(
                f"non-finite parameters at iteration {k}: |grad| = {np.linalg.norm(grad)}, "
                f"alpha = {cfg.alpha}")
        theta = new_theta
        thetas[k + 1] = theta.ravel()
        records["iteration"][k] = k
        records["mean_return"][k] = batch.returns.mean()
        records["batch_drm"][k] = drm_empirical(batch.returns, cfg.g)
        records["grad_norm"][k] = np.linalg.norm(grad)
        wall[k] = (time.perf_counter() - t0) * 1e3
        if callback is not None:
            callback(k, thetas[k + 1])
    return TrainTrace(thetas, records, wall, random_iterate_index(N, pick_rng), cfg)


def drm_onp_lr(mdp: EpisodicMdp, init_theta, cfg: TrainConfig, callback=None) -> TrainTrace:
    """On-policy DRM gradient ascent with order-statistic gradient estimates."""
    def estimate(policy, rng):
        batch = rollout_batch(mdp, policy, cfg.m, cfg.gamma, rng)
        return grad_onpolicy(batch, cfg.g, cfg.M_r).grad, batch
    return _run(mdp, init_theta, cfg.with_(mode="onpolicy"), estimate, callback)


def drm_offp_lr(mdp: EpisodicMdp, init_theta, behavior_theta, cfg: TrainConfig,
                callback=None) -> TrainTrace:
    """Off-policy variant: episodes from a fixed behavior policy, reweighted to theta_k."""
    behavior = SoftmaxPolicy(np.asarray(behavior_theta, dtype=float)
                             .reshape(mdp.n_states, mdp.n_actions))

    def estimate(policy, rng):
        batch = rollout_batch(mdp, behavior, cfg.m, cfg.gamma, rng, target=policy)
        return grad_offpolicy(batch, cfg.g, cfg.M_r).grad, batch
    cfg = cfg.with_(mode="offpolicy", behavior_theta=behavior.flat.copy())
    return _run(mdp, init_theta, cfg, estimate, callback)


def reinforce(mdp: EpisodicMdp, init_theta, cfg: TrainConfig, callback=None) -> TrainTrace:
    """Mini-batch REINFORCE on the expected return, without a baseline."""
    def estimate(policy, rng):
        batch = rollout_batch(mdp, policy, cfg.m, cfg.gamma, rng)
        return grad_reinforce(batch), batch
    return _run(mdp, init_theta, cfg.with_(mode="reinforce"), estimate, callback)


def train(mdp: EpisodicMdp, init_theta, cfg: TrainConfig, callback=None) -> TrainTrace:
    """Dispatch on ``cfg.mode``."""
    if cfg.mode == "onpolicy":
        return drm_onp_lr(mdp, init_theta, cfg, callback)
    if cfg.mode == "offpolicy":
        if cfg.behavior_theta is None:
            raise ValueError("off-policy training needs behavior_theta")
        return drm_offp_lr(mdp, init_theta, cfg.behavior_theta, cfg, callback)
    return reinforce(mdp, init_theta, cfg, callback)
