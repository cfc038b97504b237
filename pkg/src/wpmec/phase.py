"""Lossy reflection model and per-element phase fitting.

A reflecting element set to phase ``theta`` applies the coefficient
``beta(theta) * exp(j*theta)`` where the amplitude follows the coupled
model

    beta(theta) = (1 - beta_min) * ((sin(theta - phi) + 1) / 2)^alpha + beta_min.

``beta_min = 1`` recovers the ideal unit-amplitude surface.  Given an
unconstrained target coefficient ``v`` (produced by the convex steps),
:func:`fit_theta` finds the phase whose induced coefficient is closest
to ``v``, i.e. maximises

    f(theta) = 2 beta(theta) |v| cos(arg(v) - theta) - beta(theta)^2,

by a three-point parabola fit over a one-sided trust region of width
``delta`` around ``arg(v)``.  :func:`project_profile` applies the same
fit to a whole stacked profile at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .config import SystemConfig
from .model import PhaseProfile

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PhaseModel:
    """Amplitude response parameters of one element."""

    beta_min: float
    phi: float
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.beta_min <= 1.0:
            raise ValueError("beta_min must lie in (0, 1]")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")
        if not -math.pi <= self.phi <= math.pi:
            raise ValueError("phi must lie in [-pi, pi]")

    @classmethod
    def from_config(cls, config: SystemConfig) -> "PhaseModel":
        return cls(beta_min=config.beta_min, phi=config.phi_rad, alpha=config.alpha)

    @classmethod
    def ideal(cls) -> "PhaseModel":
        return cls(beta_min=1.0, phi=0.0, alpha=1.0)


@dataclass(frozen=True)
class TrustRegion:
    """Search interval for one element's phase, in unwrapped coordinates."""

    lo: float
    hi: float

    def __post_init__(self):
        if self.hi < self.lo:
            raise ValueError("trust region bounds out of order")

    def contains(self, theta: float, tol: float = 1e-12) -> bool:
        """Membership modulo full turns (the fit wraps its result)."""
        for shift in (-TWO_PI, 0.0, TWO_PI):
            if self.lo - tol <= theta + shift <= self.hi + tol:
                return True
        return False


def wrap_angle(theta):
    """Map angles into [-pi, pi)."""
    return (np.asarray(theta) + math.pi) % TWO_PI - math.pi


def amplitude(theta, model: PhaseModel):
    """Reflection amplitude beta(theta); accepts scalars or arrays."""
    arr = np.atleast_1d(np.asarray(theta, dtype=float))
    out = _kernels.amp_batch(arr.ravel(), model.beta_min, model.phi, model.alpha)
    out = out.reshape(arr.shape)
    return float(out[0]) if np.isscalar(theta) or np.asarray(theta).ndim == 0 else out


def reflect_coeff(theta, model: PhaseModel):
    """Applied coefficient beta(theta) exp(j theta)."""
    theta_arr = np.asarray(theta, dtype=float)
    return amplitude(theta_arr, model) * np.exp(1j * theta_arr)


def fit_objective(theta, v_target: complex, model: PhaseModel):
    """The matching score f(theta) that fit_theta maximises."""
    psi = np.angle(v_target)
    mag = abs(v_target)
    b = amplitude(theta, model)
    return 2.0 * b * mag * np.cos(psi - np.asarray(theta)) - b * b


def trust_region(v_target: complex, model: PhaseModel, delta: float) -> TrustRegion:
    """One-sided bracket around arg(v) that encloses the fitted phase.

    The branch comparison follows the mean amplitude towards each edge:
    deviating towards larger amplitude pays only when the target
    magnitude exceeds what the element can reflect on the way.  When
    neither one-sided test fires the side whose mean amplitude is
    closest to |v| is searched.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    psi = float(np.angle(v_target))
    if model.beta_min == 1.0:
        return TrustRegion(psi, psi)
    mag = abs(v_target)
    s_lam = 1.0 if psi >= 0.0 else -1.0
    b0 = amplitude(psi, model)
    avg_plus = 0.5 * (b0 + amplitude(psi + delta, model))
    avg_minus = 0.5 * (b0 + amplitude(psi - delta, model))
    if avg_plus < mag:
        sign = s_lam
    elif avg_minus > mag:
        sign = -s_lam
    elif abs(avg_plus - mag) <= abs(avg_minus - mag):
        sign = s_lam
    else:
        sign = -s_lam
    far = psi + sign * delta
    return TrustRegion(min(psi, far), max(psi, far))


def fit_theta(v_target: complex, model: PhaseModel, delta: float) -> float:
    """Best-matching phase for one target coefficient, wrapped to [-pi, pi).

    For the ideal model this is exactly arg(v); otherwise the parabola
    vertex over the trust region, guarded by the three sampled points.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    out = _kernels.fit_batch(
        np.array([v_target.real], dtype=float),
        np.array([v_target.imag], dtype=float),
        model.beta_min, model.phi, model.alpha, delta,
    )
    return float(wrap_angle(out[0]))


def project_profile(
    v: np.ndarray,
    model: PhaseModel,
    delta: float,
    theta_prev: np.ndarray | None = None,
) -> PhaseProfile:
    """Fit every element of a stacked profile; elementwise fit_theta.

    When ``theta_prev`` is given, each element keeps its previous phase
    if the fresh fit would match the target worse, which makes the
    phase step monotone inside penalty descent loops.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    v = np.asarray(v, dtype=complex)
    theta = _kernels.fit_batch(np.ascontiguousarray(v.real),
                               np.ascontiguousarray(v.imag),
                               model.beta_min, model.phi, model.alpha, delta)
    theta = wrap_angle(theta)
    if theta_prev is not None:
        psi = np.angle(v)
        mag = np.abs(v)

        def score(th):
            b = _kernels.amp_batch(np.ascontiguousarray(th), model.beta_min,
                                   model.phi, model.alpha)
            return 2.0 * b * mag * np.cos(psi - th) - b * b

        prev = wrap_angle(np.asarray(theta_prev, dtype=float))
        theta = np.where(score(theta) >= score(prev), theta, prev)
    anchor = reflect_coeff(theta, model)
    return PhaseProfile(theta=theta, v=anchor)


def penalty_residual(v: np.ndarray, theta: np.ndarray, model: PhaseModel) -> float:
    """Squared mismatch between free coefficients and realisable ones."""
    diff = np.asarray(v, dtype=complex) - reflect_coeff(np.asarray(theta, dtype=float), model)
    return float(np.sum(np.abs(diff) ** 2))
