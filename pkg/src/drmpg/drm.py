"""Distortion risk measures of discrete distributions and samples.

For a step CDF the Choquet integral collapses to an L-statistic, so both the
exact and the empirical versions are closed-form sums over sorted values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distortion import DistortionFn

PROB_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteDist:
    """Finite distribution with strictly increasing support ``values``."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float).ravel()
        p = np.asarray(self.probs, dtype=float).ravel()
        if v.shape != p.shape or v.size == 0:
            raise ValueError("values and probs must be non-empty and of equal length")
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > PROB_TOL * max(1, v.size):
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        if np.any(np.diff(v) <= 0):
            raise ValueError("values must be strictly increasing")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_atoms(cls, values, probs, merge_tol: float = 0.0) -> "DiscreteDist":
        """Build from unsorted, possibly repeated atoms.

        Atoms closer than ``merge_tol`` (relative to the value scale) are
        merged into one.
        """
        values = np.asarray(values, dtype=float).ravel()
        probs = np.asarray(probs, dtype=float).ravel()
        order = np.argsort(values, kind="stable")
        values, probs = values[order], probs[order]
        scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
        new_group = np.concatenate([[True], np.diff(values) > merge_tol * scale])
        idx = np.cumsum(new_group) - 1
        merged_p = np.bincount(idx, weights=probs)
        merged_v = values[new_group]
        return cls(merged_v, merged_p)

    def cdf(self, x):
        """P(X <= x)."""
        c = np.cumsum(self.probs)
        k = np.searchsorted(self.values, x, side="right")
        return np.where(k > 0, c[np.maximum(k - 1, 0)], 0.0)

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))


def drm_exact(dist: DiscreteDist, g: DistortionFn) -> float:
    """Choquet integral of a finite distribution.

    ``v_1 + sum_i (v_i - v_{i-1}) g(1 - F(v_{i-1}))``
    """
    v = dist.values
    if v.size == 1:
        return float(v[0])
    F = np.cumsum(dist.probs)[:-1]
    tail = np.clip(1.0 - F, 0.0, 1.0)
    return float(v[0] + np.dot(np.diff(v), g(tail)))


def lstat_weights(m: int, g: DistortionFn) -> np.ndarray:
    """Weights ``g((m-i+1)/m) - g((m-i)/m)`` on the ascending order statistics."""
    if m < 1:
        raise ValueError("empty sample")
    levels = g(np.arange(m, -1, -1) / m)
    return -np.diff(np.atleast_1d(levels))


def drm_empirical(sample, g: DistortionFn) -> float:
    """DRM of the empirical distribution of ``sample``."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("empty sample")
    return float(np.dot(x, lstat_weights(x.size, g)))


def edf(sample, x):
    """Fraction of ``sample`` that is ``<= x``."""
    s = np.sort(np.asarray(sample, dtype=float).ravel())
    if s.size == 0:
        raise ValueError("empty sample")
    return np.searchsorted(s, x, side="right") / s.size
