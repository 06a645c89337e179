"""Brute-force ground truth for small MDPs.

Every episode the MDP can produce within its cap is enumerated once. Given a
policy, episode probabilities follow in closed form, which gives the exact
return CDF, the exact DRM, and the exact DRM gradient. The gradient is
computed from the piecewise-constant CDF and its parameter gradient; the
finite-difference routine differentiates the exact DRM directly and serves
as an independent check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .distortion import DistortionFn
from .drm import DiscreteDist, drm_exact
from .mdp import EpisodicMdp, SoftmaxPolicy, tight_return_bound

ATLAS_LIMIT = 10**6
MASS_TOL = 1e-10
MERGE_TOL = 1e-12

# Tabular softmax constants. Score of pi(a|s) is e_a - pi(.|s) in the block
# of state s, with norm^2 = (1-p_a)^2 + sum_{b!=a} p_b^2 <= 2 (1-p_a)^2 < 2.
# The Hessian block is -(diag(p) - p p^T); Gershgorin bounds its spectral
# norm by max_i 2 p_i (1 - p_i) <= 1/2.
SOFTMAX_M_D = math.sqrt(2.0)
SOFTMAX_M_H = 0.5


@dataclass(frozen=True, eq=False)
class EpisodeAtlas:
    """All episodes of an MDP up to its cap.

    ``counts[k, s, a]`` is the number of times episode ``k`` took ``a`` in
    ``s``; ``env_prob[k]`` is the product of its transition probabilities.
    """

    mdp: EpisodicMdp
    gamma: float
    trajectories: list
    returns: np.ndarray
    env_prob: np.ndarray
    counts: np.ndarray
    lengths: np.ndarray

    def __len__(self) -> int:
        return self.returns.shape[0]

    def log_policy_prob(self, policy: SoftmaxPolicy) -> np.ndarray:
        return np.einsum("ksa,sa->k", self.counts, policy.log_probs())

    def probs(self, policy: SoftmaxPolicy) -> np.ndarray:
        """P_theta(omega) for every enumerated episode."""
        return self.env_prob * np.exp(self.log_policy_prob(policy))

    def scores(self, policy: SoftmaxPolicy) -> np.ndarray:
        """grad log P_theta(omega), flattened, one row per episode."""
        pi = policy.probs()
        out = self.counts - self.counts.sum(axis=2, keepdims=True) * pi[None]
        return out.reshape(len(self), -1)

    def is_ratios(self, target: SoftmaxPolicy, behavior: SoftmaxPolicy) -> np.ndarray:
        diff = target.log_probs() - behavior.log_probs()
        return np.exp(np.einsum("ksa,sa->k", self.counts, diff))

    def distinct_returns(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted distinct returns and, per episode, the index of its atom."""
        order = np.argsort(self.returns, kind="stable")
        r = self.returns[order]
        scale = max(1.0, float(np.max(np.abs(r))))
        new = np.concatenate([[True], np.diff(r) > MERGE_TOL * scale])
        atom_sorted = np.cumsum(new) - 1
        atom = np.empty_like(atom_sorted)
        atom[order] = atom_sorted
        return r[new], atom


def enumerate_episodes(mdp: EpisodicMdp, gamma: float, cap: int | None = None,
                       limit: int = ATLAS_LIMIT) -> EpisodeAtlas:
    """Depth-first enumeration of every episode with positive probability.

    Episodes end on reaching the terminal state or after ``cap`` steps,
    exactly as in :func:`drmpg.mdp.simulate`.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    cap = mdp.episode_cap if cap is None else int(cap)
    S, A = mdp.n_states, mdp.n_actions
    P, Rw, term = mdp.transition, mdp.reward, mdp.terminal_state
    succ = {(s, a): [(int(s2), P[s, a, s2], Rw[s, a, s2]) for s2 in np.flatnonzero(P[s, a] > 0)]
            for s in range(S) for a in range(A)}

    trajectories, returns, env_prob, lengths = [], [], [], []
    count_rows = []

    stack = [(mdp.start_state, 0, 1.0, 0.0, ())]
    while stack:
        s, t, p, ret, path = stack.pop()
        for a in range(A):
            for s2, pt, r in succ[(s, a)]:
                step = path + ((s, a, s2),)
                new_ret = ret + gamma**t * r
                new_p = p * pt
                if s2 == term or t + 1 == cap:
                    if len(returns) >= limit:
                        raise OverflowError(f"episode atlas exceeds {limit} episodes")
                    trajectories.append(step)
                    returns.append(new_ret)
                    env_prob.append(new_p)
                    lengths.append(t + 1)
                    c = np.zeros((S, A))
                    for ss, aa, _ in step:
                        c[ss, aa] += 1
                    count_rows.append(c)
                else:
                    stack.append((s2, t + 1, new_p, new_ret, step))

    atlas = EpisodeAtlas(mdp, float(gamma), trajectories, np.array(returns),
                         np.array(env_prob), np.array(count_rows), np.array(lengths))
    # under the uniform policy every action path has mass; a leak would show here
    mass = atlas.probs(SoftmaxPolicy.zeros(S, A)).sum()
    if abs(mass - 1.0) > MASS_TOL:
        raise ValueError(f"enumerated episode mass is {mass!r}, not 1")
    return atlas


def return_distribution(atlas: EpisodeAtlas, policy: SoftmaxPolicy) -> DiscreteDist:
    values, atom = atlas.distinct_returns()
    probs = np.bincount(atom, weights=atlas.probs(policy), minlength=values.size)
    return DiscreteDist(values, probs / probs.sum())


def _step_cdf(returns: np.ndarray, weights: np.ndarray, x):
    # cumulative sum over sorted returns keeps the result monotone in x
    order = np.argsort(returns, kind="stable")
    cum = np.concatenate([[0.0], np.cumsum(weights[order])])
    x = np.asarray(x, dtype=float)
    out = cum[np.searchsorted(returns[order], x, side="right")]
    return float(out) if x.ndim == 0 else out


def exact_cdf(atlas: EpisodeAtlas, policy: SoftmaxPolicy, x):
    """P_theta(R <= x)."""
    return _step_cdf(atlas.returns, atlas.probs(policy), x)


def offpolicy_cdf(atlas: EpisodeAtlas, target: SoftmaxPolicy, behavior: SoftmaxPolicy, x):
    """``E_b[1{R <= x} psi]`` computed exactly over the atlas."""
    w = atlas.probs(behavior) * atlas.is_ratios(target, behavior)
    return _step_cdf(atlas.returns, w, x)


def exact_mean(atlas: EpisodeAtlas, policy: SoftmaxPolicy) -> float:
    return float(atlas.probs(policy) @ atlas.returns)


def exact_drm(atlas: EpisodeAtlas, policy: SoftmaxPolicy, g: DistortionFn) -> float:
    return drm_exact(return_distribution(atlas, policy), g)


def exact_grad(atlas: EpisodeAtlas, policy: SoftmaxPolicy, g: DistortionFn,
               M_r: float | None = None) -> np.ndarray:
    """Exact DRM gradient ``-int g'(1 - F(x)) grad F(x) dx``.

    Between consecutive distinct returns ``v_i < v_{i+1}`` both ``F`` and
    ``grad F = sum_{R(w) <= x} P(w) grad log P(w)`` are constant, so the
    integral is a sum over segments. If ``M_r`` is given the segment
    ``[v_n, M_r]`` is included too; there ``grad F`` is the gradient of the
    total mass and vanishes up to round-off.
    """
    values, atom = atlas.distinct_returns()
    p = atlas.probs(policy)
    weighted = p[:, None] * atlas.scores(policy)
    n, d = values.size, weighted.shape[1]
    grad_F = np.zeros((n, d))
    np.add.at(grad_F, atom, weighted)
    grad_F = np.cumsum(grad_F, axis=0)
    F = np.cumsum(np.bincount(atom, weights=p, minlength=n))
    F = F / F[-1]
    widths = np.diff(values)
    if M_r is not None:
        if M_r < values[-1]:
            raise ValueError("M_r is below the largest return")
        widths = np.append(widths, M_r - values[-1])
        seg_F, seg_grad = F, grad_F
    else:
        seg_F, seg_grad = F[:-1], grad_F[:-1]
    if widths.size == 0:
        return np.zeros(d)
    dg = np.atleast_1d(g.deriv(np.clip(1.0 - seg_F, 0.0, 1.0)))
    return -(widths * dg) @ seg_grad


def finite_diff_grad(atlas: EpisodeAtlas, policy: SoftmaxPolicy, g: DistortionFn,
                     h: float = 1e-5) -> np.ndarray:
    """Central differences of :func:`exact_drm` in each parameter."""
    if h <= 0:
        raise ValueError("step h must be positive")
    base = policy.flat
    shape = policy.theta.shape
    out = np.empty(base.size)
    for k in range(base.size):
        up, down = base.copy(), base.copy()
        up[k] += h
        down[k] -= h
        f_up = exact_drm(atlas, SoftmaxPolicy(up.reshape(shape)), g)
        f_down = exact_drm(atlas, SoftmaxPolicy(down.reshape(shape)), g)
        out[k] = (f_up - f_down) / (2.0 * h)
    return out


@dataclass(frozen=True)
class BoundConstants:
    M_r: float
    M_e: float
    M_d: float
    M_h: float
    M_s: float
    M_gprime: float
    M_gdprime: float
    L_rho_prime: float

    def mse_bound_onpolicy(self, m: int) -> float:
        return (32.0 * self.M_r**2 * self.M_e**2 * self.M_d**2
                * (math.e**2 * self.M_gprime**2 + self.M_gdprime**2) / m)

    def mse_bound_offpolicy(self, m: int) -> float:
        return (32.0 * self.M_r**2 * self.M_s**2 * self.M_e**2 * self.M_d**2
                * (math.e**2 * self.M_gprime**2 + self.M_gdprime**2 * self.M_s**2) / m)

    def grad_ceiling(self) -> float:
        """Almost-sure bound on the norm of either gradient estimate."""
        return 2.0 * self.M_r * self.M_gprime * self.M_e * self.M_d * self.M_s

    def to_dict(self) -> dict:
        return asdict(self)


def smoothness_constant(M_r, M_e, M_d, M_h, M_gprime, M_gdprime) -> float:
    """Lipschitz constant of the DRM gradient."""
    return 2.0 * M_r * M_e * (M_h * M_gprime + M_e * M_d**2 * (M_gprime + M_gdprime))


def bound_constants_for(mdp: EpisodicMdp, g: DistortionFn, gamma: float,
                        behavior: SoftmaxPolicy | None = None,
                        target: SoftmaxPolicy | None = None,
                        atlas: EpisodeAtlas | None = None,
                        M_r: float | None = None) -> BoundConstants:
    """Constants of the tabular softmax class for the MSE and smoothness bounds.

    With a ``behavior`` and ``target`` pair, ``M_s`` is the exact maximum of
    the importance ratio over the enumerated episodes; otherwise ``M_s = 1``.
    """
    M_r = tight_return_bound(mdp, gamma) if M_r is None else float(M_r)
    M_e = float(mdp.episode_cap)
    M_gp, M_gpp = g.bound_constants()
    M_s = 1.0
    if behavior is not None:
        if target is None:
            raise ValueError("an off-policy M_s needs both behavior and target")
        atlas = enumerate_episodes(mdp, gamma) if atlas is None else atlas
        M_s = float(np.max(atlas.is_ratios(target, behavior)))
    L = smoothness_constant(M_r, M_e, SOFTMAX_M_D, SOFTMAX_M_H, M_gp, M_gpp)
    return BoundConstants(M_r, M_e, SOFTMAX_M_D, SOFTMAX_M_H, M_s, M_gp, M_gpp, L)
