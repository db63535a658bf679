"""
Closed-form covariance propagation, directional precision, and robust weights.

All functions accept scalars or numpy arrays (broadcasting) and return a Python
float when every input was scalar.
"""

from typing import Optional

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import InvalidParameterError
from .sde import RtSdeParams
from .spectral import DEFAULT_ROPE_BASE, RotationFreqs, require_unit, rope_schedule

PHI_SERIES_THRESHOLD = 1e-6


class FilterHyperParams(BaseModel):
    """Estimator constants shared by the filter and the attention layer."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    tau_theta2: float = Field(1e-2, gt=0)
    eps: float = Field(1e-6, gt=0)
    nu: float = Field(1.0, gt=0)
    kappa_exp: Optional[float] = Field(None, gt=0)
    beta_s: float = Field(1.0, gt=0)
    step_r: float = Field(0.1, ge=0)

    def robust_exponent(self, dim_real: Optional[int] = None) -> float:
        """Configured exponent, else (nu + D) / D for real width D."""
        if self.kappa_exp is not None:
            return self.kappa_exp
        if dim_real is None or dim_real < 1:
            raise InvalidParameterError("kappa_exp is unset and no real dimension was given for its default")
        return (self.nu + dim_real) / dim_real


class IsotropicParams(BaseModel):
    """Scalar-kernel parameters of the isotropic baseline (one mu, sigma^2, eta^2, gamma^2)."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    mu: float = Field(0.0, ge=0)
    sigma2: float = Field(0.0, ge=0)
    eta2: float = Field(0.0, ge=0)
    gamma2: float = Field(0.0, ge=0)
    omega: Optional[tuple[float, ...]] = None
    rope_base: float = Field(DEFAULT_ROPE_BASE, gt=0)

    @model_validator(mode="after")
    def _lag_zero_variance(self):
        if self.eta2 + self.gamma2 <= 0:
            raise ValueError("eta2 + gamma2 must be positive so the lag-zero precision is finite")
        return self

    def freqs_for(self, d: int) -> RotationFreqs:
        if self.omega is None:
            return rope_schedule(d, self.rope_base)
        if len(self.omega) != d:
            raise InvalidParameterError(f"omega has {len(self.omega)} entries, expected {d}")
        return RotationFreqs(np.asarray(self.omega))


def _out(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def _nonnegative(name: str, value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise InvalidParameterError(f"{name} must be nonnegative")
    return arr


# ------------------------------
# Propagated variances
# ------------------------------

def phi(mu: ArrayLike, dt: ArrayLike):
    """(1 - exp(-2 mu dt)) / (2 mu), and dt at mu = 0."""
    mu = _nonnegative("mu", mu)
    dt = _nonnegative("dt", dt)
    x = 2.0 * mu * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = -np.expm1(-x) / (2.0 * mu)
    series = dt * (1.0 - mu * dt + (2.0 / 3.0) * (mu * dt) ** 2)
    return _out(np.where(x < PHI_SERIES_THRESHOLD, series, exact))


def sigma_v2(params: RtSdeParams, dt: ArrayLike):
    """Propagated (radial, tangential) variances of a measurement carried across dt."""
    dt = _nonnegative("dt", dt)
    vr = phi(params.mu_r, dt) * params.sigma_r ** 2 + np.exp(-2.0 * params.mu_r * dt) * params.eta_r ** 2
    vt = phi(params.mu_t, dt) * params.sigma_t ** 2 + np.exp(-2.0 * params.mu_t * dt) * params.eta_t ** 2
    return _out(vr), _out(vt)


def residual_sigma2(params: RtSdeParams, dt: ArrayLike):
    vr, vt = sigma_v2(params, dt)
    return _out(np.asarray(vr) + params.gamma_r ** 2), _out(np.asarray(vt) + params.gamma_t ** 2)


def transported_magnitude(m_j: ArrayLike, mu_r: float, dt: ArrayLike):
    m_j = _nonnegative("m_j", m_j)
    dt = _nonnegative("dt", dt)
    return _out(m_j * np.exp(-mu_r * dt))


def isotropic_sigma2(iso: IsotropicParams, tau: ArrayLike):
    """sigma^2 phi(mu, tau) + eta^2 exp(-2 mu tau) + gamma^2."""
    tau = _nonnegative("tau", tau)
    return _out(iso.sigma2 * np.asarray(phi(iso.mu, tau)) + iso.eta2 * np.exp(-2.0 * iso.mu * tau) + iso.gamma2)


# ------------------------------
# Directional precision and distances
# ------------------------------

def directional_precision(
    hp: FilterHyperParams,
    params: RtSdeParams,
    m_i: ArrayLike,
    m_j: ArrayLike,
    dt: ArrayLike,
):
    """
    kappa_ij = [S_t(0) / (m_i^2 + eps) + S_t(dt) / (m_hat^2 + eps) + tau^2]^-1

    where S_t is the tangential residual variance and m_hat the key magnitude
    transported across dt. Bounded above by 1 / tau_theta2.
    """
    m_i = _nonnegative("m_i", m_i)
    m_hat = np.asarray(transported_magnitude(m_j, params.mu_r, dt))
    s0 = residual_sigma2(params, 0.0)[1]
    sdt = np.asarray(residual_sigma2(params, dt)[1])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        query_term = np.where(s0 == 0, 0.0, s0 / (m_i ** 2 + hp.eps))
        key_term = np.where(sdt == 0, 0.0, sdt / (m_hat ** 2 + hp.eps))
    kappa = 1.0 / (query_term + key_term + hp.tau_theta2)
    if not np.all(kappa > 0):
        raise InvalidParameterError(f"directional precision underflows to zero at eps={hp.eps:g}; raise eps")
    return _out(kappa)


def angular_distance2(kappa: ArrayLike, u_i: ArrayLike, u_hat: ArrayLike):
    """Whitened squared angular distance 2 kappa (1 - Re(u_i^H u_hat))."""
    u_i = require_unit(u_i, name="u_i")
    u_hat = require_unit(u_hat, name="u_hat")
    cos = np.sum(u_i * u_hat, axis=-1)
    return _out(np.maximum(2.0 * np.asarray(kappa) * (1.0 - cos), 0.0))


def robust_weight(hp: FilterHyperParams, d2: ArrayLike, dim_real: Optional[int] = None):
    """Student-t weight (1 + d2 / nu)^-kappa_exp, in (0, 1]."""
    d2 = _nonnegative("d2", d2)
    kappa = hp.robust_exponent(dim_real)
    return _out(np.exp(-kappa * np.log1p(d2 / hp.nu)))
