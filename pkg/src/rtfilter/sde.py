"""
Seeded simulation of the radial-tangential SDE and its measurement model.

    dx = (-mu_r P_R(u) - mu_t P_T(u) + Lambda_Omega) x dt + sigma_r P_R(u) dw + sigma_t P_T(u) dw

Each step applies the deterministic decay exactly (half a step before and half
after the noise), adds Euler-Maruyama noise sqrt(dt) * xi, then rotates exactly.
Projectors are evaluated either at the instantaneous direction x/|x|
(frame="state") or at the deterministically transported reference direction
(frame="nominal").
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field

from .errors import InvalidParameterError, RtFilterError
from .spectral import (
    DEFAULT_ROPE_BASE,
    ComplexVec,
    RotationFreqs,
    as_complex_vec,
    normalize,
    require_unit,
    rope_schedule,
    rotate,
    rt_components,
)

logger = logging.getLogger(__name__)

Frame = Literal["state", "nominal"]

CHUNK_PATHS = 4096
MIN_MC_PATHS = 1000
CSV_FLOAT_FORMAT = "%.17g"


# ------------------------------
# Parameters and containers
# ------------------------------

class RtSdeParams(BaseModel):
    """Dynamical and noise parameters of the RT-SDE and its measurement model."""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    mu_r: float = Field(0.0, ge=0)
    mu_t: float = Field(0.0, ge=0)
    sigma_r: float = Field(0.0, ge=0)
    sigma_t: float = Field(0.0, ge=0)
    eta_r: float = Field(0.0, ge=0)
    eta_t: float = Field(0.0, ge=0)
    gamma_r: float = Field(0.0, ge=0)  # carried for completeness; kappa only uses gamma_t
    gamma_t: float = Field(0.0, ge=0)
    omega: Optional[tuple[float, ...]] = None
    rope_base: float = Field(DEFAULT_ROPE_BASE, gt=0)

    def freqs_for(self, d: int) -> RotationFreqs:
        """Explicit omega when given, otherwise the RoPE schedule for d coordinates."""
        if self.omega is None:
            return rope_schedule(d, self.rope_base)
        if len(self.omega) != d:
            raise InvalidParameterError(
                f"omega has {len(self.omega)} entries but the state has {d} complex coordinates"
            )
        return RotationFreqs(np.asarray(self.omega))

    @property
    def noiseless(self) -> bool:
        return self.sigma_r == self.sigma_t == self.eta_r == self.eta_t == 0.0


@dataclass(frozen=True)
class Trajectory:
    """
    One simulated path on a time grid.
    - times: increasing grid, shape (T,).
    - states: latent x at every time, shape (T, 2d).
    - magnitudes: |x|, shape (T,).
    - directions: x/|x|, shape (T, 2d).
    - measurements: noisy z per time, NaN rows where nothing was measured; None when no measurement was taken.
    """
    times: NDArray[np.float64]
    states: NDArray[np.float64] = field(repr=False)
    magnitudes: NDArray[np.float64] = field(repr=False)
    directions: NDArray[np.float64] = field(repr=False)
    measurements: Optional[NDArray[np.float64]] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.states.shape[-1] // 2

    @classmethod
    def from_states(cls, times: ArrayLike, states: ArrayLike, measurements: Optional[ArrayLike] = None):
        states = np.asarray(states, dtype=np.float64)
        return cls(
            times=np.asarray(times, dtype=np.float64),
            states=states,
            magnitudes=np.linalg.norm(states, axis=-1),
            directions=normalize(states),
            measurements=None if measurements is None else np.asarray(measurements, dtype=np.float64),
        )


@dataclass(frozen=True)
class PropagatedCovariance:
    """
    Monte Carlo estimate of the covariance accumulated over one lag.
    - cov: dense (2d, 2d) empirical covariance.
    - direction: rotate(normalize(x0), omega, dt_total).
    - radial, tangential: RT projections of cov.
    - radial_se, tangential_se: Gaussian standard errors of those projections.
    """
    cov: NDArray[np.float64] = field(repr=False)
    direction: NDArray[np.float64] = field(repr=False)
    radial: float
    tangential: float
    radial_se: float
    tangential_se: float
    n_paths: int
    substeps: int


# ------------------------------
# RNG streams
# ------------------------------

def path_generator(seed: int | np.random.SeedSequence) -> np.random.Generator:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def _chunk_streams(seed: int, n_paths: int) -> list[tuple[int, np.random.SeedSequence]]:
    n_chunks = max(1, math.ceil(n_paths / CHUNK_PATHS))
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes = [min(CHUNK_PATHS, n_paths - i * CHUNK_PATHS) for i in range(n_chunks)]
    return list(zip(sizes, children))


def _as_generator(seed: int | np.random.Generator) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else path_generator(seed)


# ------------------------------
# Step kernels (vectorized over paths)
# ------------------------------

def _rt_noise(u: NDArray, xi: NDArray, s_r: float, s_t: float) -> NDArray:
    radial = u * np.sum(u * xi, axis=-1, keepdims=True)
    return s_r * radial + s_t * (xi - radial)


def _decay(y: NDArray, u: NDArray, e_r: float, e_t: float) -> NDArray:
    # e_t y + (e_r - e_t) P_R(u) y is exact for a frozen frame and bit-exact when e_r == e_t
    if e_r == e_t:
        return e_t * y
    return e_t * y + (e_r - e_t) * u * np.sum(u * y, axis=-1, keepdims=True)


def _check_grid(dt: float, steps: int) -> None:
    if not dt > 0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    if steps < 0:
        raise InvalidParameterError(f"steps must be nonnegative, got {steps}")


def _cartesian_paths(
    params: RtSdeParams,
    x0: NDArray,
    dt: float,
    steps: int,
    rng: np.random.Generator,
    frame: Frame,
    record: bool,
) -> NDArray:
    """Integrate (P, 2d) initial states; returns (steps+1, P, 2d) if record else (P, 2d)."""
    freqs = params.freqs_for(x0.shape[-1] // 2)
    half_r = math.exp(-0.5 * params.mu_r * dt)
    half_t = math.exp(-0.5 * params.mu_t * dt)
    sqdt = math.sqrt(dt)
    x = x0.copy()
    ref = normalize(x0)
    history = [x.copy()] if record else None
    for _ in range(steps):
        xi = rng.standard_normal(x.shape)
        u = normalize(x) if frame == "state" else ref
        y = _decay(x, u, half_r, half_t)
        y = y + _rt_noise(u, sqdt * xi, params.sigma_r, params.sigma_t)
        y = _decay(y, u, half_r, half_t)
        x = rotate(y, freqs, dt)
        if frame == "nominal":
            ref = rotate(ref, freqs, dt)
        if record:
            history.append(x.copy())
    return np.stack(history) if record else x


def _polar_paths(
    params: RtSdeParams,
    m0: NDArray,
    u0: NDArray,
    dt: float,
    steps: int,
    rng: np.random.Generator,
    record: bool,
) -> tuple[NDArray, NDArray]:
    freqs = params.freqs_for(u0.shape[-1] // 2)
    width = u0.shape[-1]
    e_r = math.exp(-params.mu_r * dt)
    sqdt = math.sqrt(dt)
    m, u = m0.copy(), u0.copy()
    ms, us = ([m.copy()], [u.copy()]) if record else (None, None)
    for _ in range(steps):
        xi = rng.standard_normal(u.shape)
        xi_r = np.sum(u * xi, axis=-1)
        ito = params.sigma_t ** 2 * (width - 1) / (2.0 * m)  # mu~_t * m, the Ito magnitude drift
        m_next = e_r * (m + ito * dt + params.sigma_r * sqdt * xi_r)
        tangent = xi - u * xi_r[..., None]
        u = u + (params.sigma_t / m)[..., None] * sqdt * tangent - (ito / m)[..., None] * dt * u
        u = rotate(normalize(u), freqs, dt)
        m = m_next
        if record:
            ms.append(m.copy())
            us.append(u.copy())
    if record:
        return np.stack(ms), np.stack(us)
    return m, u


# ------------------------------
# Public simulators
# ------------------------------

def simulate_cartesian(
    params: RtSdeParams,
    x0: ArrayLike,
    dt: float,
    steps: int,
    seed: int,
    frame: Frame = "state",
    measure_every: int = 0,
) -> Trajectory:
    """
    Simulate one Cartesian path.

    With measure_every = k > 0 a measurement is sampled at every k-th grid time
    (starting at t = 0) from an independent child stream of `seed`.
    """
    _check_grid(dt, steps)
    x0 = as_complex_vec(x0).reshape(-1)
    if not np.linalg.norm(x0) > 0:
        raise InvalidParameterError("x0 must be nonzero")
    path_ss, meas_ss = np.random.SeedSequence(seed).spawn(2)
    states = _cartesian_paths(params, x0[None, :], dt, steps, path_generator(path_ss), frame, record=True)[:, 0, :]
    times = dt * np.arange(steps + 1, dtype=np.float64)
    measurements = None
    if measure_every > 0:
        measurements = np.full_like(states, np.nan)
        rows = np.arange(0, steps + 1, measure_every)
        measurements[rows] = sample_measurement(states[rows], params, path_generator(meas_ss))
    return Trajectory.from_states(times, states, measurements)


def simulate_polar(
    params: RtSdeParams,
    m0: float,
    u0: ArrayLike,
    dt: float,
    steps: int,
    seed: int,
) -> Trajectory:
    """Integrate the coupled magnitude/direction system, renormalizing u every step."""
    _check_grid(dt, steps)
    if not m0 > 0:
        raise InvalidParameterError(f"m0 must be positive, got {m0}")
    u0 = require_unit(as_complex_vec(u0).reshape(-1), name="u0")
    path_ss, _ = np.random.SeedSequence(seed).spawn(2)
    ms, us = _polar_paths(params, np.array([m0]), u0[None, :], dt, steps, path_generator(path_ss), record=True)
    times = dt * np.arange(steps + 1, dtype=np.float64)
    states = ms[:, 0, None] * us[:, 0, :]
    return Trajectory(times=times, states=states, magnitudes=ms[:, 0].copy(), directions=us[:, 0, :].copy())


def _run_chunks(fn, seed: int, n_paths: int, workers: int) -> list:
    streams = _chunk_streams(seed, n_paths)
    if workers <= 1 or len(streams) == 1:
        return [fn(size, ss) for size, ss in streams]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        # map preserves chunk order, so the reduction never depends on scheduling
        return list(executor.map(lambda item: fn(*item), streams))


def simulate_ensemble(
    params: RtSdeParams,
    x0: ArrayLike,
    dt: float,
    steps: int,
    n_paths: int,
    seed: int,
    frame: Frame = "state",
    workers: int = 1,
) -> NDArray[np.float64]:
    """Terminal states of n_paths Cartesian paths, shape (n_paths, 2d)."""
    _check_grid(dt, steps)
    x0 = as_complex_vec(x0).reshape(-1)
    if not np.linalg.norm(x0) > 0:
        raise InvalidParameterError("x0 must be nonzero")

    def chunk(size: int, ss: np.random.SeedSequence) -> NDArray:
        start = np.broadcast_to(x0, (size, x0.shape[0]))
        return _cartesian_paths(params, start, dt, steps, path_generator(ss), frame, record=False)

    logger.debug("Cartesian ensemble: %d paths x %d steps", n_paths, steps)
    return np.concatenate(_run_chunks(chunk, seed, n_paths, workers))


def simulate_polar_ensemble(
    params: RtSdeParams,
    m0: float,
    u0: ArrayLike,
    dt: float,
    steps: int,
    n_paths: int,
    seed: int,
    workers: int = 1,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Terminal (magnitudes, directions) of n_paths polar paths; streams match simulate_ensemble."""
    _check_grid(dt, steps)
    if not m0 > 0:
        raise InvalidParameterError(f"m0 must be positive, got {m0}")
    u0 = require_unit(as_complex_vec(u0).reshape(-1), name="u0")

    def chunk(size: int, ss: np.random.SeedSequence):
        return _polar_paths(
            params, np.full(size, float(m0)), np.broadcast_to(u0, (size, u0.shape[0])),
            dt, steps, path_generator(ss), record=False,
        )

    parts = _run_chunks(chunk, seed, n_paths, workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def sample_measurement(
    x: ArrayLike,
    params: RtSdeParams,
    seed: int | np.random.Generator,
) -> ComplexVec:
    """z = x + eta_r P_R(u) xi_1 + eta_t P_T(u) xi_2 with u = x/|x|; broadcasts over leading axes."""
    x = as_complex_vec(x)
    if np.any(np.linalg.norm(x, axis=-1) == 0):
        raise InvalidParameterError("cannot measure a zero state: its direction is undefined")
    rng = _as_generator(seed)
    u = normalize(x)
    xi1 = rng.standard_normal(x.shape)
    xi2 = rng.standard_normal(x.shape)
    radial = u * np.sum(u * xi1, axis=-1, keepdims=True)
    tangent = xi2 - u * np.sum(u * xi2, axis=-1, keepdims=True)
    return x + params.eta_r * radial + params.eta_t * tangent


# ------------------------------
# Monte Carlo covariance oracle
# ------------------------------

def default_substeps(params: RtSdeParams, dt_total: float, frame: Frame = "nominal") -> int:
    """Substeps keeping mu*dt <= 1e-2, and sigma*sqrt(dt) <= 1e-2 when the frame follows the state."""
    n = math.ceil(max(params.mu_r, params.mu_t) * dt_total / 1e-2)
    if frame == "state":
        n = max(n, math.ceil(max(params.sigma_r, params.sigma_t) ** 2 * dt_total / 1e-4))
    return max(n, 1)


def deterministic_flow(params: RtSdeParams, u0: NDArray, v: NDArray, dt_total: float) -> NDArray:
    """Transport v along the noise-free flow around reference direction u0."""
    freqs = params.freqs_for(u0.shape[-1] // 2)
    decayed = _decay(v, u0, math.exp(-params.mu_r * dt_total), math.exp(-params.mu_t * dt_total))
    return rotate(decayed, freqs, dt_total)


def monte_carlo_propagated_cov(
    params: RtSdeParams,
    x0: ArrayLike,
    dt_total: float,
    n_paths: int,
    substeps: Optional[int] = None,
    seed: int = 0,
    frame: Frame = "nominal",
    measurement: Literal["transported", "terminal"] = "transported",
    workers: int = 1,
) -> PropagatedCovariance:
    """
    Empirical covariance of a measurement carried across dt_total.

    "transported": RT measurement noise drawn at x0 and pushed through the
    deterministic flow, added to the simulated terminal state. "terminal":
    fresh measurement noise drawn at the terminal state.
    """
    if n_paths < MIN_MC_PATHS:
        raise InvalidParameterError(f"need at least {MIN_MC_PATHS} paths, got {n_paths}")
    if not dt_total > 0:
        raise InvalidParameterError(f"dt_total must be positive, got {dt_total}")
    x0 = as_complex_vec(x0).reshape(-1)
    if not np.linalg.norm(x0) > 0:
        raise InvalidParameterError("x0 must be nonzero")
    n_sub = substeps if substeps is not None else default_substeps(params, dt_total, frame)
    if n_sub < 1:
        raise InvalidParameterError(f"substeps must be positive, got {n_sub}")
    dt = dt_total / n_sub
    u0 = normalize(x0)

    def chunk(size: int, ss: np.random.SeedSequence) -> NDArray:
        rng = path_generator(ss)
        start = np.broadcast_to(x0, (size, x0.shape[0]))
        if measurement == "transported":
            noise = sample_measurement(start, params, rng) - start
            terminal = _cartesian_paths(params, start, dt, n_sub, rng, frame, record=False)
            return terminal + deterministic_flow(params, u0, noise, dt_total)
        terminal = _cartesian_paths(params, start, dt, n_sub, rng, frame, record=False)
        return sample_measurement(terminal, params, rng)

    logger.info("Monte Carlo covariance: %d paths, lag %.4g, %d substeps (%s frame)", n_paths, dt_total, n_sub, frame)
    samples = np.concatenate(_run_chunks(chunk, seed, n_paths, workers))
    centered = samples - samples.mean(axis=0)
    cov = centered.T @ centered / (n_paths - 1)
    direction = rotate(u0, params.freqs_for(x0.shape[0] // 2), dt_total)
    radial, tangential = rt_components(cov, direction)
    width = x0.shape[0]
    return PropagatedCovariance(
        cov=cov,
        direction=direction,
        radial=radial,
        tangential=tangential,
        radial_se=radial * math.sqrt(2.0 / (n_paths - 1)),
        tangential_se=tangential * math.sqrt(2.0 / ((n_paths - 1) * (width - 1))),
        n_paths=n_paths,
        substeps=n_sub,
    )


# ------------------------------
# CSV export
# ------------------------------

def trajectory_columns(d: int) -> list[str]:
    cols = ["t", "m"]
    cols += [f"{part}_{k}" for k in range(d) for part in ("re", "im")]
    cols += [f"{part}_{k}" for k in range(d) for part in ("zre", "zim")]
    return cols


def export_trajectory(traj: Trajectory, path: str | Path) -> Path:
    """Write t, m, state pairs and measurement pairs (empty when absent) as CSV."""
    d = traj.dim
    n = traj.times.shape[0]
    meas = traj.measurements if traj.measurements is not None else np.full((n, 2 * d), np.nan)
    data = np.column_stack([traj.times, traj.magnitudes, traj.states, meas]) if n else np.empty((0, 2 + 4 * d))
    frame = pd.DataFrame(data, columns=trajectory_columns(d))
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, na_rep="")
    except OSError as exc:
        raise RtFilterError(f"could not write trajectory to {path}: {exc}") from exc
    return path


def load_trajectory(path: str | Path) -> Trajectory:
    """Parse a CSV written by export_trajectory."""
    try:
        frame = pd.read_csv(path, dtype=np.float64)
    except OSError as exc:
        raise RtFilterError(f"could not read trajectory from {path}: {exc}") from exc
    d = (frame.shape[1] - 2) // 4
    states = frame[[f"{p}_{k}" for k in range(d) for p in ("re", "im")]].to_numpy()
    meas = frame[[f"{p}_{k}" for k in range(d) for p in ("zre", "zim")]].to_numpy()
    return Trajectory(
        times=frame["t"].to_numpy(),
        states=states,
        magnitudes=frame["m"].to_numpy(),
        directions=normalize(states),
        measurements=None if np.all(np.isnan(meas)) else meas,
    )
