"""
Complex-paired vector algebra in the eigenbasis.

A complex vector of dimension d is stored as 2d float64 values interleaved as
(re_0, im_0, re_1, im_1, ...). Every function here accepts arrays whose last
axis holds one such vector and broadcasts over any leading axes, so a whole
sequence (N, 2d) or an ensemble of paths (P, 2d) goes through the same code.

Angles and projections use the real inner product <a, b> = Re(a^H b) on the
2d-real unit sphere.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionMismatchError, InvalidParameterError, NonUnitDirectionError

ComplexVec = NDArray[np.float64]

UNIT_TOLERANCE = 1e-6
DEFAULT_ROPE_BASE = 10000.0


# ------------------------------
# Layout helpers
# ------------------------------

def as_complex_vec(data: ArrayLike) -> ComplexVec:
    """Coerce to a float64 array whose last axis has even length."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] % 2:
        raise DimensionMismatchError(
            f"expected interleaved (re, im) pairs on the last axis, got shape {arr.shape}"
        )
    return arr


def dim_complex(v: ArrayLike) -> int:
    return as_complex_vec(v).shape[-1] // 2


def from_complex(z: ArrayLike) -> ComplexVec:
    """Interleave a complex array into the paired real layout."""
    z = np.asarray(z, dtype=np.complex128)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],), dtype=np.float64)
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def to_complex(v: ArrayLike) -> NDArray[np.complex128]:
    v = as_complex_vec(v)
    return v[..., 0::2] + 1j * v[..., 1::2]


def _check_same_dim(a: ComplexVec, b: ComplexVec) -> None:
    if a.shape[-1] != b.shape[-1]:
        raise DimensionMismatchError(
            f"complex dimensions differ: {a.shape[-1] // 2} vs {b.shape[-1] // 2}"
        )


# ------------------------------
# Inner products and norms
# ------------------------------

def complex_dot(a: ArrayLike, b: ArrayLike) -> complex | NDArray[np.complex128]:
    """Hermitian product sum_k conj(a_k) b_k, conjugating the first argument."""
    a, b = as_complex_vec(a), as_complex_vec(b)
    _check_same_dim(a, b)
    ar, ai = a[..., 0::2], a[..., 1::2]
    br, bi = b[..., 0::2], b[..., 1::2]
    re = np.sum(ar * br + ai * bi, axis=-1)
    im = np.sum(ar * bi - ai * br, axis=-1)
    result = re + 1j * im
    return complex(result) if np.ndim(result) == 0 else result


def real_inner(a: ArrayLike, b: ArrayLike) -> float | NDArray[np.float64]:
    """Re(a^H b), which is the Euclidean dot product of the paired layout."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionMismatchError(f"widths differ: {a.shape[-1]} vs {b.shape[-1]}")
    result = np.sum(a * b, axis=-1)
    return float(result) if np.ndim(result) == 0 else result


def norm(v: ArrayLike) -> float | NDArray[np.float64]:
    result = np.linalg.norm(np.asarray(v, dtype=np.float64), axis=-1)
    return float(result) if np.ndim(result) == 0 else result


def normalize(v: ArrayLike, eps: float = 1e-12) -> NDArray[np.float64]:
    """Retract onto the unit sphere; vectors shorter than eps are divided by eps (0 stays 0)."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(n, eps)


def require_unit(u: ArrayLike, tol: float = UNIT_TOLERANCE, name: str = "u") -> NDArray[np.float64]:
    u = np.asarray(u, dtype=np.float64)
    dev = np.abs(np.linalg.norm(u, axis=-1) - 1.0)
    if np.any(dev > tol):
        raise NonUnitDirectionError(
            f"{name} must have unit norm within {tol:g}, max deviation {float(np.max(dev)):.3e}"
        )
    return u


# ------------------------------
# Rotational transport
# ------------------------------

@dataclass(frozen=True)
class RotationFreqs:
    """
    Angular frequencies of the diagonal rotation generator.
    - omega: one real frequency (rad/time) per complex coordinate.
    """
    omega: NDArray[np.float64] = field(repr=False)

    def __post_init__(self):
        omega = np.array(self.omega, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(omega)):
            raise InvalidParameterError("rotation frequencies must be finite")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)

    @property
    def dim(self) -> int:
        return self.omega.shape[0]

    def __getitem__(self, block: slice) -> "RotationFreqs":
        return RotationFreqs(self.omega[block])

    @classmethod
    def zeros(cls, d: int) -> "RotationFreqs":
        return cls(np.zeros(d))


def rope_schedule(d: int, base: float = DEFAULT_ROPE_BASE) -> RotationFreqs:
    """Geometric RoPE frequencies base^(-2k/D) over the real width D = 2d."""
    if d < 1:
        raise InvalidParameterError(f"complex dimension must be positive, got {d}")
    k = np.arange(d, dtype=np.float64)
    return RotationFreqs(base ** (-2.0 * k / (2 * d)))


def rotate(v: ArrayLike, freqs: RotationFreqs, t: ArrayLike) -> ComplexVec:
    """
    Multiply every complex coordinate k by exp(i omega_k t).

    `t` is a scalar or an array matching the leading axes of `v` (one time per
    token). Each (re, im) pair is turned by a 2x2 sine-cosine rotation.
    """
    v = as_complex_vec(v)
    if v.shape[-1] != 2 * freqs.dim:
        raise DimensionMismatchError(
            f"vector has {v.shape[-1] // 2} complex coordinates, frequencies have {freqs.dim}"
        )
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise InvalidParameterError("rotation time must be finite")
    angles = np.multiply.outer(t, freqs.omega)
    cos, sin = np.cos(angles), np.sin(angles)
    re, im = v[..., 0::2], v[..., 1::2]
    shape = np.broadcast_shapes(re.shape, angles.shape)
    out = np.empty(shape[:-1] + (2 * shape[-1],), dtype=np.float64)
    out[..., 0::2] = re * cos - im * sin
    out[..., 1::2] = re * sin + im * cos
    return out


# ------------------------------
# Radial / tangential geometry
# ------------------------------

def project_radial(u: ArrayLike, v: ArrayLike) -> ComplexVec:
    u = require_unit(u)
    v = np.asarray(v, dtype=np.float64)
    return u * np.asarray(real_inner(u, v))[..., None]


def project_tangent(u: ArrayLike, v: ArrayLike) -> ComplexVec:
    v = np.asarray(v, dtype=np.float64)
    return v - project_radial(u, v)


@dataclass(frozen=True)
class RtCovariance:
    """
    Radial-tangential covariance sigma_r2 P_R(u) + sigma_t2 P_T(u).
    - sigma_r2: variance along the direction.
    - sigma_t2: variance in every tangent direction.
    - direction: unit vector u.
    """
    sigma_r2: float
    sigma_t2: float
    direction: ComplexVec = field(repr=False)

    def __post_init__(self):
        if not (self.sigma_r2 > 0 and self.sigma_t2 > 0):
            raise InvalidParameterError(
                f"RT covariance needs positive variances, got ({self.sigma_r2}, {self.sigma_t2})"
            )
        u = require_unit(as_complex_vec(self.direction), tol=1e-9, name="direction").copy()
        if u.ndim != 1:
            raise DimensionMismatchError("RT covariance direction must be a single vector")
        u.setflags(write=False)
        object.__setattr__(self, "direction", u)


def apply_cov(c: RtCovariance, v: ArrayLike) -> ComplexVec:
    radial = project_radial(c.direction, v)
    return c.sigma_r2 * radial + c.sigma_t2 * (np.asarray(v, dtype=np.float64) - radial)


def apply_precision(c: RtCovariance, v: ArrayLike) -> ComplexVec:
    """Inverse of apply_cov via the rank-1 (Sherman-Morrison) structure."""
    radial = project_radial(c.direction, v)
    return radial / c.sigma_r2 + (np.asarray(v, dtype=np.float64) - radial) / c.sigma_t2


def rt_components(cov: ArrayLike, u: ArrayLike) -> tuple[float, float]:
    """Project a dense (D, D) covariance onto (radial, mean tangential) variances."""
    cov = np.asarray(cov, dtype=np.float64)
    u = require_unit(u)
    width = u.shape[-1]
    if cov.shape != (width, width):
        raise DimensionMismatchError(f"covariance shape {cov.shape} does not match width {width}")
    radial = float(u @ cov @ u)
    tangential = (float(np.trace(cov)) - radial) / (width - 1)
    return radial, tangential
