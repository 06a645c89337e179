"""Smooth distortion functions g: [0, 1] -> [0, 1] and their derivatives.

Every family is concave on its parameter domain, so the induced risk measure
is coherent. Derivatives are closed form so that the sup-norm constants
returned by :meth:`DistortionFn.bound_constants` are exact.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any

import numpy as np

DOMAIN_TOL = 1e-12


class Family(str, enum.Enum):
    DUAL_POWER = "dual_power"
    QUADRATIC = "quadratic"
    EXPONENTIAL = "exponential"
    SQUARE_ROOT = "square_root"
    LOGARITHMIC = "logarithmic"
    IDENTITY = "identity"

    @classmethod
    def parse(cls, name: "str | Family") -> "Family":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {
            "dualpower": "dual_power",
            "squareroot": "square_root",
            "sqrt": "square_root",
            "log": "logarithmic",
            "exp": "exponential",
        }
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown distortion family {name!r}") from None


DEFAULT_R = {
    Family.DUAL_POWER: 2.0,
    Family.QUADRATIC: 0.5,
    Family.EXPONENTIAL: 1.0,
    Family.SQUARE_ROOT: 1.0,
    Family.LOGARITHMIC: 1.0,
    Family.IDENTITY: 0.0,
}


def _check_r(family: Family, r: float) -> None:
    if not np.isfinite(r):
        raise ValueError(f"{family.value}: parameter r must be finite, got {r}")
    if family is Family.DUAL_POWER and r < 2:
        raise ValueError(f"dual_power requires r >= 2, got {r}")
    if family is Family.QUADRATIC and not 0 <= r <= 1:
        raise ValueError(f"quadratic requires 0 <= r <= 1, got {r}")
    if family in (Family.EXPONENTIAL, Family.SQUARE_ROOT, Family.LOGARITHMIC) and r <= 0:
        raise ValueError(f"{family.value} requires r > 0, got {r}")


@dataclass(frozen=True)
class DistortionFn:
    """A distortion function from one of the standard smooth families.

    Parameters
    ----------
    family : Family or str
        One of ``dual_power``, ``quadratic``, ``exponential``,
        ``square_root``, ``logarithmic`` or ``identity``.
    r : float, optional
        Family parameter. Defaults to a representative value per family
        (``DEFAULT_R``); ignored by ``identity``.

    Examples
    --------
    >>> g = DistortionFn("dual_power", 2)
    >>> float(g(0.5))
    0.75
    """

    family: Family
    r: float = float("nan")

    def __post_init__(self) -> None:
        family = Family.parse(self.family)
        r = DEFAULT_R[family] if self.r is None or np.isnan(self.r) else float(self.r)
        if family is Family.IDENTITY:
            r = 0.0
        _check_r(family, r)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "r", r)

    @classmethod
    def identity(cls) -> "DistortionFn":
        return cls(Family.IDENTITY)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DistortionFn":
        return cls(d["family"], d.get("r", float("nan")))

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family.value, "r": self.r}

    def __str__(self) -> str:
        if self.family is Family.IDENTITY:
            return "identity"
        return f"{self.family.value}(r={self.r:g})"

    # -- evaluation ---------------------------------------------------------

    def __call__(self, s):
        return self.eval(s)

    def eval(self, s):
        """g(s)."""
        s = _validate(s)
        f, r = self.family, self.r
        if f is Family.IDENTITY:
            out = s * 1.0
        elif f is Family.DUAL_POWER:
            out = 1.0 - (1.0 - s) ** r
        elif f is Family.QUADRATIC:
            out = (1.0 + r) * s - r * s * s
        elif f is Family.EXPONENTIAL:
            out = -np.expm1(-r * s) / -np.expm1(-r)
        elif f is Family.SQUARE_ROOT:
            out = (np.sqrt(1.0 + r * s) - 1.0) / (np.sqrt(1.0 + r) - 1.0)
        else:
            out = np.log1p(r * s) / np.log1p(r)
        return _finish(out)

    def deriv(self, s):
        """g'(s); one-sided at the endpoints."""
        s = _validate(s)
        f, r = self.family, self.r
        if f is Family.IDENTITY:
            out = np.ones_like(s)
        elif f is Family.DUAL_POWER:
            out = r * (1.0 - s) ** (r - 1.0)
        elif f is Family.QUADRATIC:
            out = 1.0 + r - 2.0 * r * s
        elif f is Family.EXPONENTIAL:
            out = r * np.exp(-r * s) / -np.expm1(-r)
        elif f is Family.SQUARE_ROOT:
            out = r / (2.0 * np.sqrt(1.0 + r * s) * (np.sqrt(1.0 + r) - 1.0))
        else:
            out = r / ((1.0 + r * s) * np.log1p(r))
        return _finish(out)

    def second_deriv(self, s):
        """g''(s)."""
        s = _validate(s)
        f, r = self.family, self.r
        if f is Family.IDENTITY:
            out = np.zeros_like(s)
        elif f is Family.DUAL_POWER:
            out = -r * (r - 1.0) * (1.0 - s) ** (r - 2.0)
        elif f is Family.QUADRATIC:
            out = np.full_like(s, -2.0 * r)
        elif f is Family.EXPONENTIAL:
            out = -r * r * np.exp(-r * s) / -np.expm1(-r)
        elif f is Family.SQUARE_ROOT:
            out = -r * r / (4.0 * (1.0 + r * s) ** 1.5 * (np.sqrt(1.0 + r) - 1.0))
        else:
            out = -r * r / ((1.0 + r * s) ** 2 * np.log1p(r))
        return _finish(out)

    def right_deriv_zero(self) -> float:
        """Right derivative of g at 0."""
        return float(self.deriv(0.0))

    def bound_constants(self) -> tuple[float, float]:
        """Return ``(sup |g'|, sup |g''|)`` over (0, 1).

        All non-identity families are concave with g' decreasing and |g''|
        largest at s = 0, so both suprema are attained at the left endpoint.
        """
        if self.family is Family.IDENTITY:
            return 1.0, 0.0
        return float(self.deriv(0.0)), float(abs(self.second_deriv(0.0)))


def _validate(s):
    s = np.asarray(s, dtype=float)
    if np.any(np.isnan(s)):
        raise ValueError("distortion argument is NaN")
    if np.any(s < -DOMAIN_TOL) or np.any(s > 1.0 + DOMAIN_TOL):
        bad = s[(s < -DOMAIN_TOL) | (s > 1.0 + DOMAIN_TOL)]
        raise ValueError(f"distortion argument outside [0, 1]: {bad.ravel()[:5]}")
    return np.clip(s, 0.0, 1.0)


def _finish(out):
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def all_families(include_identity: bool = True) -> list[DistortionFn]:
    """One instance of every family at its default parameter."""
    fams = [f for f in Family if include_identity or f is not Family.IDENTITY]
    return [DistortionFn(f) for f in fams]
