"""
Single-query directional filtering: transport, precision-weighted consensus,
the directional MLE, tangent-space and geodesic updates, and one IRLS step.

Directions here are real arrays on the unit sphere of their last axis; only
transport needs the complex pairing.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    AntipodalError,
    DegenerateConsensusError,
    DimensionMismatchError,
    InvalidParameterError,
)
from .kernel import FilterHyperParams, angular_distance2, directional_precision, robust_weight
from .sde import RtSdeParams
from .spectral import RotationFreqs, normalize, require_unit, rotate

CONSENSUS_EPS = 1e-12
ANTIPODAL_TOLERANCE = 1e-12


@dataclass(frozen=True)
class DirectionalEvidence:
    """
    Transported evidence seen by one query.
    - directions: (n, D) unit vectors u_hat_ij.
    - precisions: (n,) positive kappa_ij.
    - weights: optional (n,) robust weights in (0, 1].
    """
    directions: NDArray[np.float64] = field(repr=False)
    precisions: NDArray[np.float64] = field(repr=False)
    weights: Optional[NDArray[np.float64]] = field(default=None, repr=False)

    def __post_init__(self):
        directions = np.atleast_2d(np.asarray(self.directions, dtype=np.float64))
        precisions = np.atleast_1d(np.asarray(self.precisions, dtype=np.float64))
        if directions.shape[0] != precisions.shape[0]:
            raise DimensionMismatchError(
                f"{directions.shape[0]} directions but {precisions.shape[0]} precisions"
            )
        if np.any(precisions <= 0):
            raise InvalidParameterError("precisions must be positive")
        require_unit(directions, name="evidence direction")
        object.__setattr__(self, "directions", directions)
        object.__setattr__(self, "precisions", precisions)
        if self.weights is not None:
            weights = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
            if weights.shape != precisions.shape:
                raise DimensionMismatchError("weights and precisions differ in length")
            if np.any(weights <= 0) or np.any(weights > 1):
                raise InvalidParameterError("robust weights must lie in (0, 1]")
            object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.precisions.shape[0]

    @property
    def effective_precisions(self) -> NDArray[np.float64]:
        return self.precisions if self.weights is None else self.precisions * self.weights


def transport_direction(u_j: ArrayLike, freqs: RotationFreqs, dt: float) -> NDArray[np.float64]:
    return rotate(require_unit(u_j, name="u_j"), freqs, dt)


def consensus(ev: DirectionalEvidence) -> NDArray[np.float64]:
    """Convex combination sum_j A_j u_hat_j with A = kappa~ / sum kappa~."""
    if len(ev) == 0:
        raise InvalidParameterError("consensus needs at least one evidence item")
    kt = ev.effective_precisions
    return (kt / kt.sum()) @ ev.directions


def directional_mle(ev: DirectionalEvidence, eps: float = CONSENSUS_EPS) -> NDArray[np.float64]:
    u_bar = consensus(ev)
    if np.linalg.norm(u_bar) <= eps:
        raise DegenerateConsensusError("degenerate consensus: the weighted evidence cancels out")
    return normalize(u_bar)


def directional_nll(u: ArrayLike, ev: DirectionalEvidence) -> float:
    """sum_j kappa~_j (1 - Re(u^H u_hat_j))."""
    u = require_unit(u)
    cos = ev.directions @ u
    return float(np.sum(ev.effective_precisions * (1.0 - cos)))


# ------------------------------
# State updates
# ------------------------------

def _nonzero_state(z_s: ArrayLike) -> tuple[NDArray[np.float64], float]:
    z = np.asarray(z_s, dtype=np.float64)
    m2 = float(z @ z)
    if m2 == 0:
        raise InvalidParameterError("state is zero: the tangent space is undefined")
    return z, m2


def tangent_project_update(z_s: ArrayLike, u_bar: ArrayLike, step_r: float) -> NDArray[np.float64]:
    """z + r (u_bar - Re<z, u_bar> / |z|^2 z); the increment is orthogonal to z."""
    z, m2 = _nonzero_state(z_s)
    u_bar = np.asarray(u_bar, dtype=np.float64)
    tangent = u_bar - (float(z @ u_bar) / m2) * z
    return z + step_r * tangent


def additive_update(z_s: ArrayLike, u_bar: ArrayLike, step_r: float) -> NDArray[np.float64]:
    return np.asarray(z_s, dtype=np.float64) + step_r * np.asarray(u_bar, dtype=np.float64)


def _angle(u: NDArray, v: NDArray) -> float:
    # atan2 form stays accurate near 0 and pi
    return math.atan2(float(np.linalg.norm(u - (u @ v) * v)), float(u @ v))


def slerp_update(u: ArrayLike, u_star: ArrayLike, alpha: float) -> NDArray[np.float64]:
    """Great-circle interpolation by fraction alpha of the angle between u and u_star."""
    u = require_unit(u)
    u_star = require_unit(u_star, name="u_star")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidParameterError(f"alpha must lie in [0, 1], got {alpha}")
    theta = _angle(u, u_star)
    if math.pi - theta <= ANTIPODAL_TOLERANCE:
        raise AntipodalError("slerp between antipodal directions is undefined")
    if theta == 0.0:
        return u.copy()
    if alpha == 1.0:
        return u_star.copy()
    s = math.sin(theta)
    return (math.sin((1.0 - alpha) * theta) / s) * u + (math.sin(alpha * theta) / s) * u_star


def geodesic_step(u: ArrayLike, u_star: ArrayLike, angle: float) -> NDArray[np.float64]:
    """Move `angle` radians from u along the great circle toward u_star (capped at u_star)."""
    u = require_unit(u)
    u_star = require_unit(u_star, name="u_star")
    theta = _angle(u, u_star)
    if theta == 0.0:
        return u.copy()
    return slerp_update(u, u_star, min(angle / theta, 1.0))


def magnitude_update(m: float, u: ArrayLike, u_bar: ArrayLike, step_r: float) -> float:
    if not m > 0:
        raise InvalidParameterError(f"magnitude must be positive, got {m}")
    u = require_unit(u)
    return float(np.linalg.norm(m * u + step_r * np.asarray(u_bar, dtype=np.float64)))


# ------------------------------
# One IRLS iteration
# ------------------------------

def build_evidence(
    z_s: ArrayLike,
    keys: Sequence[tuple[ArrayLike, float]],
    t_i: float,
    params: RtSdeParams,
    hp: FilterHyperParams,
) -> DirectionalEvidence:
    """
    Transport every key to t_i and weigh it against the current state's direction.

    Zero keys have no direction and are dropped, so an all-zero key set gives empty evidence.
    """
    if len(keys) == 0:
        raise InvalidParameterError("irls needs at least one key")
    z, _ = _nonzero_state(z_s)
    width = z.shape[-1]
    freqs = params.freqs_for(width // 2)
    m_i = float(np.linalg.norm(z))
    u_i = z / m_i
    key_states = np.stack([np.asarray(k, dtype=np.float64) for k, _ in keys])
    if key_states.shape[-1] != width:
        raise DimensionMismatchError(f"keys have width {key_states.shape[-1]}, state has {width}")
    lags = t_i - np.array([t for _, t in keys], dtype=np.float64)
    m_j = np.linalg.norm(key_states, axis=-1)
    nonzero = m_j > 0
    key_states, lags, m_j = key_states[nonzero], lags[nonzero], m_j[nonzero]
    u_hat = rotate(normalize(key_states), freqs, lags)
    kappa = np.asarray(directional_precision(hp, params, m_i, m_j, np.abs(lags)))
    d2 = np.asarray(angular_distance2(kappa, u_i, u_hat))
    weights = np.asarray(robust_weight(hp, d2, width))
    return DirectionalEvidence(u_hat, kappa, weights)


def irls_step(
    z_s: ArrayLike,
    keys: Sequence[tuple[ArrayLike, float]],
    t_i: float,
    params: RtSdeParams,
    hp: FilterHyperParams,
) -> NDArray[np.float64]:
    """Rebuild evidence from the current state, form its consensus, take one tangent step."""
    ev = build_evidence(z_s, keys, t_i, params, hp)
    if len(ev) == 0:
        return np.array(z_s, dtype=np.float64)
    return tangent_project_update(z_s, consensus(ev), hp.step_r)
