"""Bounded loss functions, their derivatives, IRLS weights and robust scale.

The central family is the Gaussian power-divergence loss with tuning
``alpha``: per residual ``e`` and scale ``sigma``,

    rho(e) = -((2*pi*sigma^2)^(-alpha/2) * exp(-alpha*e^2/(2*sigma^2)) - 1) / alpha

for ``alpha > 0``.  At ``alpha = 0`` the family degenerates to the
Gaussian maximum-likelihood loss ``log(2*pi*sigma^2)/2 + e^2/(2*sigma^2)``
(the alpha -> 0 limit of the display above), which is the least-squares
objective up to scale-dependent constants.  Larger ``alpha`` buys
robustness: the derivative ``psi`` is bounded and redescending, so large
residuals lose all influence.  Tukey's bisquare and plain squared error
are provided as alternatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericFailureError

__all__ = [
    "LossSpec",
    "rho",
    "psi",
    "dpsi",
    "irls_weight",
    "m_scale",
]

MAD_NORMALIZER = 0.6745  # median absolute deviation of a standard normal

_FAMILIES = ("power_divergence", "bisquare", "least_squares")
_SCALE_POLICIES = ("mad", "fixed")


@dataclass(frozen=True)
class LossSpec:
    """Loss family plus scale-estimation policy.

    Parameters
    ----------
    family : {"power_divergence", "bisquare", "least_squares"}
    alpha : float
        Robustness tuning for the power-divergence family; ``alpha = 0``
        is exactly the ML/LS objective.
    c : float
        Bisquare tuning constant (default 4.685, the 95% Gaussian
        efficiency convention).
    scale_policy : {"mad", "fixed"}
        "mad" re-estimates the scale from current residuals; "fixed"
        keeps ``fixed_sigma``.
    fixed_sigma : float, optional
        Required when ``scale_policy == "fixed"``.
    """

    family: str = "power_divergence"
    alpha: float = 0.0
    c: float = 4.685
    scale_policy: str = "mad"
    fixed_sigma: float | None = None

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise InvalidInputError(f"unknown loss family {self.family!r}")
        if self.family == "power_divergence" and self.alpha < 0:
            raise InvalidInputError("alpha must be >= 0")
        if self.family == "bisquare" and self.c <= 0:
            raise InvalidInputError("bisquare tuning c must be > 0")
        if self.scale_policy not in _SCALE_POLICIES:
            raise InvalidInputError(f"unknown scale policy {self.scale_policy!r}")
        if self.scale_policy == "fixed":
            if self.fixed_sigma is None or not self.fixed_sigma > 0:
                raise InvalidInputError("fixed scale policy needs fixed_sigma > 0")

    def to_dict(self) -> dict:
        d: dict = {"family": self.family, "scale_policy": self.scale_policy}
        if self.family == "power_divergence":
            d["alpha"] = self.alpha
        if self.family == "bisquare":
            d["c"] = self.c
        if self.fixed_sigma is not None:
            d["fixed_sigma"] = self.fixed_sigma
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossSpec":
        return cls(
            family=d.get("family", "power_divergence"),
            alpha=float(d.get("alpha", 0.0)),
            c=float(d.get("c", 4.685)),
            scale_policy=d.get("scale_policy", "mad"),
            fixed_sigma=d.get("fixed_sigma"),
        )


def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise InvalidInputError(f"scale must be positive, got {sigma}")


def rho(z, sigma: float, spec: LossSpec):
    """Per-observation loss at raw residual(s) ``z`` and scale ``sigma``."""
    _check_sigma(sigma)
    z = np.asarray(z, dtype=np.float64)
    if spec.family == "least_squares":
        return z * z
    if spec.family == "bisquare":
        u = z / (spec.c * sigma)
        out = np.where(np.abs(u) <= 1.0,
                       (spec.c ** 2 / 6.0) * (1.0 - (1.0 - u * u) ** 3),
                       spec.c ** 2 / 6.0)
        return out if out.ndim else float(out)
    a = spec.alpha
    if a == 0.0:
        return 0.5 * math.log(2.0 * math.pi * sigma * sigma) + z * z / (2.0 * sigma * sigma)
    pref = (2.0 * math.pi * sigma * sigma) ** (-a / 2.0)
    out = -(pref * np.exp(-a * z * z / (2.0 * sigma * sigma)) - 1.0) / a
    return out if out.ndim else float(out)


def psi(z, sigma: float, spec: LossSpec):
    """Derivative of :func:`rho` with respect to the raw residual."""
    _check_sigma(sigma)
    z = np.asarray(z, dtype=np.float64)
    if spec.family == "least_squares":
        return 2.0 * z
    if spec.family == "bisquare":
        u = z / (spec.c * sigma)
        core = z / (sigma * sigma) * (1.0 - u * u) ** 2
        out = np.where(np.abs(u) <= 1.0, core, 0.0)
        return out if out.ndim else float(out)
    a = spec.alpha
    s2 = sigma * sigma
    if a == 0.0:
        return z / s2
    pref = (2.0 * math.pi * s2) ** (-a / 2.0)
    out = (z / s2) * pref * np.exp(-a * z * z / (2.0 * s2))
    return out if out.ndim else float(out)


def dpsi(z, sigma: float, spec: LossSpec):
    """Second derivative of :func:`rho` (needed by the sensitivity matrix)."""
    _check_sigma(sigma)
    z = np.asarray(z, dtype=np.float64)
    if spec.family == "least_squares":
        out = np.full_like(z, 2.0)
        return out if out.ndim else float(out)
    if spec.family == "bisquare":
        u = z / (spec.c * sigma)
        s2 = sigma * sigma
        core = (1.0 - u * u) * (1.0 - 5.0 * u * u) / s2
        out = np.where(np.abs(u) <= 1.0, core, 0.0)
        return out if out.ndim else float(out)
    a = spec.alpha
    s2 = sigma * sigma
    if a == 0.0:
        out = np.full_like(z, 1.0 / s2)
        return out if out.ndim else float(out)
    pref = (2.0 * math.pi * s2) ** (-a / 2.0)
    out = pref * np.exp(-a * z * z / (2.0 * s2)) * (1.0 / s2 - a * z * z / (s2 * s2))
    return out if out.ndim else float(out)


def irls_weight(residual, sigma: float, spec: LossSpec):
    """Reweighting factor ``w(e) = psi(e/sigma)/(e/sigma)``, continuous at 0.

    Normalized so that ``w(0) = 1``.  For the power-divergence family
    this is exactly ``exp(-alpha * e^2 / (2*sigma^2))``; for ``alpha = 0``
    and plain least squares the weight is constant.
    """
    _check_sigma(sigma)
    e = np.asarray(residual, dtype=np.float64)
    if spec.family == "least_squares":
        out = np.ones_like(e)
        return out if out.ndim else float(out)
    if spec.family == "bisquare":
        u = e / (spec.c * sigma)
        out = np.where(np.abs(u) <= 1.0, (1.0 - u * u) ** 2, 0.0)
        return out if out.ndim else float(out)
    a = spec.alpha
    if a == 0.0:
        out = np.ones_like(e)
        return out if out.ndim else float(out)
    out = np.exp(-a * e * e / (2.0 * sigma * sigma))
    return out if out.ndim else float(out)


def m_scale(residuals) -> float:
    """Normalized MAD: ``median(|e - median(e)|) / 0.6745``.

    Consistent for the standard deviation at the Gaussian.  Raises on a
    degenerate (all equal) residual vector, where no scale is
    identifiable.
    """
    e = np.asarray(residuals, dtype=np.float64)
    if e.size < 2:
        raise InvalidInputError("need at least 2 residuals for a scale estimate")
    med = float(np.median(e))
    mad = float(np.median(np.abs(e - med)))
    if mad == 0.0:
        raise NumericFailureError("degenerate residuals: all deviations zero")
    return mad / MAD_NORMALIZER
