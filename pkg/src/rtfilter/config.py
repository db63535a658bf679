"""Versioned JSON experiment configuration."""

import itertools
import json
import math
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .kernel import FilterHyperParams
from .sde import RtSdeParams
from .transformer import BlockConfig

_STRICT = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)


class SimulationGrid(BaseModel):
    model_config = _STRICT

    dim: int = Field(3, ge=1)  # complex coordinates of the simulated state
    dt: float = Field(1e-2, gt=0)
    steps: int = Field(1000, ge=0)
    paths: int = Field(10_000, ge=1)
    substeps: Optional[int] = Field(None, ge=1)
    frame: Literal["state", "nominal"] = "state"
    measure_every: int = Field(1, ge=0)
    workers: int = Field(4, ge=1)
    x0: Optional[tuple[float, ...]] = None

    @model_validator(mode="after")
    def _x0_width(self):
        if self.x0 is not None and len(self.x0) != 2 * self.dim:
            raise ValueError(f"x0 must have 2*dim = {2 * self.dim} entries, got {len(self.x0)}")
        return self

    def initial_state(self) -> list[float]:
        if self.x0 is not None:
            return list(self.x0)
        return [1.0] + [0.0] * (2 * self.dim - 1)


class SequenceSpec(BaseModel):
    model_config = _STRICT

    tokens: int = Field(8, ge=1)
    dim: int = Field(4, ge=1)
    heads: int = Field(1, ge=1)
    model_dim: Optional[int] = Field(None, ge=2)
    batch: int = Field(50, ge=1)
    init: Literal["identity", "pseudo_identity", "random"] = "identity"

    @property
    def n_model(self) -> int:
        return self.model_dim if self.model_dim is not None else 2 * self.dim


class CovarianceSweep(BaseModel):
    model_config = _STRICT

    lags: tuple[float, ...] = (0.25, 1.0, 4.0)
    regimes: tuple[float, ...] = (0.02, 0.05, 0.1, 0.3, 0.5)  # sigma_t * sqrt(lag) targets
    regime_lag: float = Field(1.0, gt=0)
    assert_regime_max: float = Field(0.1, ge=0)
    frame: Literal["state", "nominal"] = "nominal"
    regime_frame: Literal["state", "nominal"] = "state"
    measurement: Literal["transported", "terminal"] = "transported"
    grid: bool = False
    grid_mu: tuple[float, ...] = (0.0, 0.1, 1.0)
    grid_noise: tuple[float, ...] = (0.0, 0.05, 0.2)
    grid_max_regime: float = Field(0.1, ge=0)

    def grid_points(self) -> list[dict[str, float]]:
        """
        Full factorial over mu_r, mu_t in grid_mu, the four noise scales in grid_noise
        and the lags, keeping sigma_t * sqrt(lag) <= grid_max_regime. Sorted by
        (mu_r, mu_t, sigma_r, sigma_t, eta_r, eta_t, lag).
        """
        mus, noise = sorted(set(self.grid_mu)), sorted(set(self.grid_noise))
        points = []
        for mu_r, mu_t, sigma_r, sigma_t, eta_r, eta_t, lag in itertools.product(
            mus, mus, noise, noise, noise, noise, sorted(set(self.lags)),
        ):
            if sigma_t * math.sqrt(lag) <= self.grid_max_regime:
                points.append(dict(
                    mu_r=mu_r, mu_t=mu_t, sigma_r=sigma_r, sigma_t=sigma_t, eta_r=eta_r, eta_t=eta_t, lag=lag,
                ))
        return points


class Tolerances(BaseModel):
    model_config = _STRICT

    covariance_rel: float = Field(0.05, gt=0)
    covariance_abs: float = Field(1e-6, ge=0)
    deterministic: float = Field(1e-9, ge=0)
    measurement_rel: float = Field(0.1, gt=0)
    oracle: float = Field(1e-10, ge=0)
    stochastic: float = Field(1e-12, ge=0)
    orthogonality: float = Field(1e-10, ge=0)
    descent: float = Field(1e-12, ge=0)


class ExperimentConfig(BaseModel):
    """Everything a CLI run needs; embedded verbatim in its report."""

    model_config = _STRICT

    version: Literal[1] = 1
    experiment: str = "rtfilter"
    seed: int = Field(0, ge=0)
    sde: RtSdeParams = RtSdeParams()
    filter: FilterHyperParams = FilterHyperParams()
    grid: SimulationGrid = SimulationGrid()
    sequence: SequenceSpec = SequenceSpec()
    block: BlockConfig = BlockConfig(layers=8)
    covariance: CovarianceSweep = CovarianceSweep()
    tolerances: Tolerances = Tolerances()
    output: Optional[str] = None

    def with_overrides(self, seed: Optional[int] = None, paths: Optional[int] = None) -> "ExperimentConfig":
        data = self.model_dump()
        if seed is not None:
            data["seed"] = seed
        if paths is not None:
            data["grid"]["paths"] = paths
        # re-validate so overrides obey the same constraints as the file
        return ExperimentConfig.model_validate(data)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"could not read config {path}: {exc}") from exc
    try:
        return ExperimentConfig.model_validate(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}:\n{exc}") from exc
