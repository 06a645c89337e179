"""Likelihood-ratio gradient estimators of the DRM objective.

Both estimators integrate ``-g'(1 - CDF_hat(x)) * grad_CDF_hat(x)`` over
``[-M_r, M_r]``. The CDF estimates are step functions, so the integral is a
finite sum over gaps between consecutive order statistics of the returns.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .distortion import DistortionFn
from .mdp import Episode, EpisodeBatch

RETURN_TOL = 1e-9

TERMS_COLUMNS = ("rank", "episode", "ret", "gap", "cdf_level", "weight", "psi", "partial_norm")


@dataclass
class GradReport:
    """A gradient estimate with enough detail to audit every order statistic."""

    grad: np.ndarray
    m: int
    M_r: float
    terms: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.grad))

    def to_csv(self, path) -> None:
        """One row per order statistic, ascending in return."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(TERMS_COLUMNS)
            for row in zip(*(self.terms[c] for c in TERMS_COLUMNS)):
                w.writerow([repr(x.item()) if hasattr(x, "item") else x for x in row])


def _as_batch(episodes) -> EpisodeBatch:
    if isinstance(episodes, EpisodeBatch):
        return episodes
    return EpisodeBatch.from_episodes(episodes)


def sort_order(returns: np.ndarray, score_sums: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Ascending order by return, ties broken by episode content.

    The secondary keys make the order a function of the multiset of episodes,
    so shuffling the input cannot change the result.
    """
    keys = [score_sums[:, k] for k in range(score_sums.shape[1] - 1, -1, -1)]
    return np.lexsort((*keys, psi, returns))


def _order_statistic_grad(batch: EpisodeBatch, g: DistortionFn, M_r: float,
                          psi: np.ndarray) -> GradReport:
    R = np.asarray(batch.returns, dtype=float)
    m = R.shape[0]
    if m == 0:
        raise ValueError("empty batch")
    if M_r <= 0 or not np.isfinite(M_r):
        raise ValueError(f"M_r must be positive and finite, got {M_r}")
    worst = np.max(np.abs(R))
    if worst > M_r * (1.0 + RETURN_TOL):
        raise ValueError(f"|return| = {worst} exceeds the bound M_r = {M_r}")
    if np.any(~np.isfinite(psi)) or np.any(psi < 0):
        raise ValueError("importance ratios must be finite and non-negative")

    order = sort_order(R, batch.score_sums, psi)
    R_sorted = R[order]
    psi_sorted = psi[order]
    weighted = (batch.score_sums[order] * psi_sorted[:, None]).astype(np.longdouble)
    partial = np.cumsum(weighted, axis=0)

    gaps = R_sorted[:-1] - R_sorted[1:]
    levels = np.minimum(1.0, np.cumsum(psi_sorted)[:-1] / m)
    weights = np.atleast_1d(g.deriv(1.0 - levels))
    g0 = g.right_deriv_zero()

    coef = np.empty(m, dtype=np.longdouble)
    coef[:-1] = gaps * weights
    coef[-1] = (R_sorted[-1] - M_r) * g0
    # last row of `partial` is the full weighted score sum
    body = coef[:-1] @ partial[:-1] if m > 1 else np.zeros(partial.shape[1], dtype=np.longdouble)
    grad = ((body + coef[-1] * partial[-1]) / m).astype(float)

    terms = {
        "rank": np.arange(1, m + 1),
        "episode": order,
        "ret": R_sorted,
        "gap": np.append(gaps, R_sorted[-1] - M_r),
        "cdf_level": np.append(levels, 1.0),
        "weight": np.append(weights, g0),
        "psi": psi_sorted,
        "partial_norm": np.linalg.norm(partial.astype(float), axis=1),
    }
    return GradReport(grad, m, float(M_r), terms)


def grad_onpolicy(episodes: EpisodeBatch | Sequence[Episode], g: DistortionFn,
                  M_r: float) -> GradReport:
    """Order-statistic estimate of the DRM gradient from on-policy episodes.

    ``(1/m) sum_{i<m} (R_(i) - R_(i+1)) g'(1 - i/m) sum_{j<=i} dl_(j)
    + (1/m) (R_(m) - M_r) g'_+(0) sum_j dl_(j)``
    """
    batch = _as_batch(episodes)
    if np.any(batch.is_ratios != 1.0):
        raise ValueError("on-policy episodes must have importance ratio 1")
    return _order_statistic_grad(batch, g, M_r, np.ones(len(batch)))


def grad_offpolicy(episodes: EpisodeBatch | Sequence[Episode], g: DistortionFn,
                   M_r: float) -> GradReport:
    """Importance-weighted estimate from behavior-policy episodes.

    Same as :func:`grad_onpolicy` with each score sum scaled by its ratio and
    the CDF level at rank ``i`` replaced by ``min(1, sum_{j<=i} psi_(j) / m)``.
    The clip acts only inside ``g'``.
    """
    batch = _as_batch(episodes)
    return _order_statistic_grad(batch, g, M_r, np.asarray(batch.is_ratios, dtype=float))


def grad_reinforce(episodes: EpisodeBatch | Sequence[Episode]) -> np.ndarray:
    """Plain mini-batch REINFORCE: ``(1/m) sum_i R_i dl_i``."""
    batch = _as_batch(episodes)
    if len(batch) == 0:
        raise ValueError("empty batch")
    return batch.returns @ batch.score_sums / len(batch)


def cdf_grad_onpolicy(episodes: EpisodeBatch | Sequence[Episode], x: float) -> np.ndarray:
    """``(1/m) sum_i 1{R_i <= x} dl_i``, the score-weighted EDF at ``x``."""
    batch = _as_batch(episodes)
    if len(batch) == 0:
        raise ValueError("empty batch")
    mask = (batch.returns <= x).astype(float)
    return mask @ batch.score_sums / len(batch)
