"""
Validation experiments behind the CLI.

Each command turns an ExperimentConfig into a Report: a flat list of checks
(value, tolerance, pass, asserted) plus small tables, with the exact config
and seed embedded so a run can be replayed.
"""

import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Literal, Optional

import jsonschema
import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from .attention import ProjectionSet, isotropic_rfa_forward, project_and_normalize, rt_rfa_forward
from .config import ExperimentConfig
from .errors import ReportError
from .kernel import IsotropicParams, sigma_v2
from .oracles import flat_prior_score, naive_isotropic_rfa, naive_rt_rfa, reference_rope_attention
from .sde import (
    RtSdeParams,
    export_trajectory,
    monte_carlo_propagated_cov,
    simulate_cartesian,
    simulate_ensemble,
)
from .spectral import normalize, project_tangent
from .transformer import Layer, irls_trace, median_loss_by_layer, shared_layers, stack_forward

logger = logging.getLogger(__name__)

Command = Literal["simulate", "validate-cov", "attention-check", "irls-descent"]


# ------------------------------
# Report model
# ------------------------------

class Check(BaseModel):
    model_config = ConfigDict(populate_by_name=True, frozen=True)

    name: str
    value: float
    tolerance: float
    passed: bool = Field(alias="pass")
    asserted: bool = True

    @classmethod
    def at_most(cls, name: str, value: float, tolerance: float, asserted: bool = True) -> "Check":
        value = float(value)
        passed = value <= tolerance
        if not math.isfinite(value):
            value = sys.float_info.max  # JSON has no inf or nan
        return cls(name=name, value=value, tolerance=float(tolerance), passed=passed, asserted=asserted)

    @classmethod
    def reported(cls, name: str, value: float) -> "Check":
        return cls(name=name, value=float(value), tolerance=0.0, passed=True, asserted=False)


class Report(BaseModel):
    command: Command
    version: int = 1
    experiment: str
    seed: int
    config: dict[str, Any]
    checks: list[Check] = []
    tables: dict[str, list[dict[str, Any]]] = {}

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.asserted)

    def to_json(self) -> str:
        payload = self.model_dump(by_alias=True, mode="json")
        try:
            jsonschema.validate(payload, report_schema())
        except jsonschema.ValidationError as exc:
            raise ReportError(f"report does not match its schema: {exc.message}") from exc
        try:
            return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"
        except ValueError as exc:
            raise ReportError(f"report contains a non-finite number: {exc}") from exc


def report_schema() -> dict:
    text = resources.files("rtfilter").joinpath("schemas/report.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def write_report(report: Report, path: str | Path) -> Path:
    path = Path(path)
    text = report.to_json()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ReportError(f"could not write report to {path}: {exc}") from exc
    return path


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _records(frame: pd.DataFrame) -> list[dict[str, Any]]:
    return [{key: _plain(v) for key, v in row.items()} for row in frame.to_dict(orient="records")]


def _point_seeds(seed: int, count: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(max(count, 1))][:count]


def _generators(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.Philox(ss)) for ss in np.random.SeedSequence(seed).spawn(count)]


def _max_abs(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    finite = np.isfinite(a) & np.isfinite(b)
    if np.any(np.isfinite(a) != np.isfinite(b)):
        return math.inf
    return float(np.max(np.abs(a[finite] - b[finite]), initial=0.0))


# ------------------------------
# ValidationHarness Class
# ------------------------------

class ValidationHarness:
    """
    Runs the four validation experiments for one config:
      - simulate: one exported trajectory plus ensemble magnitude statistics.
      - validate_covariance: Monte Carlo vs closed-form propagated covariance over lags and noise regimes.
      - attention_check: vectorized attention against loop oracles and structural invariants.
      - irls_descent: per-layer directional loss of shared-weight stacks.
    """

    def __init__(self, config: ExperimentConfig, status_callback: Optional[Callable[[str, Any], None]] = None):
        self.config = config
        self.status_callback = status_callback

    def _status(self, event: str, payload: Any) -> None:
        logger.info("%s: %s", event, payload)
        if self.status_callback:
            self.status_callback(event, payload)

    def _report(self, command: Command, checks: list[Check], tables: Optional[dict] = None) -> Report:
        report = Report(
            command=command,
            experiment=self.config.experiment,
            seed=self.config.seed,
            config=self.config.model_dump(mode="json"),
            checks=checks,
            tables=tables or {},
        )
        failed = [c.name for c in checks if c.asserted and not c.passed]
        self._status("done", f"{command}: {len(checks)} checks, {len(failed)} failed")
        return report

    # -- simulate -------------------------------------------------------

    def simulate(self, csv_path: str | Path) -> Report:
        cfg, grid, params = self.config, self.config.grid, self.config.sde
        tol = cfg.tolerances
        x0 = np.array(grid.initial_state())
        self._status("simulate", f"{grid.steps} steps of dt={grid.dt:g}, frame={grid.frame}")
        traj = simulate_cartesian(params, x0, grid.dt, grid.steps, cfg.seed, grid.frame, grid.measure_every)
        export_trajectory(traj, csv_path)

        self._status("ensemble", f"{grid.paths} paths")
        finals = simulate_ensemble(params, x0, grid.dt, grid.steps, grid.paths, cfg.seed, grid.frame, grid.workers)
        m_final = np.linalg.norm(finals, axis=-1)
        checks = [
            Check.reported("final_magnitude_mean", np.mean(m_final)),
            Check.reported("final_magnitude_var", np.var(m_final, ddof=1) if m_final.size > 1 else 0.0),
        ]

        m0 = float(np.linalg.norm(x0))
        if params.sigma_r == params.sigma_t == 0 and params.mu_r == params.mu_t == 0:
            checks.append(Check.at_most("magnitude_constant", np.max(np.abs(traj.magnitudes - m0)), tol.deterministic))

        if traj.measurements is not None and params.eta_t > 0:
            rows = ~np.isnan(traj.measurements[:, 0])
            u = traj.directions[rows]
            tangent = np.linalg.norm(project_tangent(u, normalize(traj.measurements[rows])), axis=-1)
            scaled = tangent * traj.magnitudes[rows] / params.eta_t
            rms = math.sqrt(float(np.mean(scaled ** 2)))
            expected = math.sqrt(x0.shape[0] - 1)
            linear = params.eta_t / float(np.min(traj.magnitudes[rows])) <= 0.1
            checks.append(Check.at_most("measurement_tangential_rms", abs(rms / expected - 1.0), tol.measurement_rel, asserted=linear))

        omega = params.freqs_for(grid.dim).omega
        if params.sigma_t == 0 and grid.steps > 0:
            pairs = traj.states.reshape(traj.states.shape[0], -1, 2)
            increments = []
            for k in np.flatnonzero((omega > 0) & (omega * grid.dt < math.pi)):
                if np.all(np.hypot(pairs[:, k, 0], pairs[:, k, 1]) > 1e-12):
                    phase = np.unwrap(np.arctan2(pairs[:, k, 1], pairs[:, k, 0]))
                    increments.append(float(np.min(np.diff(phase))))
            if increments:
                value = min(increments)
                checks.append(Check(name="phase_strictly_increasing", value=value, tolerance=0.0, passed=value > 0))
        return self._report("simulate", checks)

    # -- validate-cov ---------------------------------------------------

    def validate_covariance(self) -> Report:
        cfg, sweep, params, tol = self.config, self.config.covariance, self.config.sde, self.config.tolerances
        x0 = np.array(cfg.grid.initial_state())
        lags = sorted(sweep.lags)
        regimes = sorted(sweep.regimes)
        seeds = _point_seeds(cfg.seed, len(lags) + len(regimes))
        checks, rows = [], []

        def compare(label: str, p, lag: float, frame: str, seed: int, asserted: bool, extra: dict) -> None:
            est = monte_carlo_propagated_cov(
                p, x0, lag, cfg.grid.paths, cfg.grid.substeps, seed, frame, sweep.measurement, cfg.grid.workers,
            )
            cf_r, cf_t = sigma_v2(p, lag)
            for part, mc, cf in (("radial", est.radial, cf_r), ("tangential", est.tangential, cf_t)):
                bound = max(tol.covariance_rel * abs(cf), tol.covariance_abs)
                checks.append(Check.at_most(f"{label}_{part}", abs(mc - cf), bound, asserted=asserted))
            rows.append({
                **extra, "lag": lag, "frame": frame, "substeps": est.substeps,
                "mc_radial": est.radial, "closed_radial": cf_r, "radial_se": est.radial_se,
                "mc_tangential": est.tangential, "closed_tangential": cf_t, "tangential_se": est.tangential_se,
            })

        for index, lag in enumerate(lags):
            self._status("lag", f"{lag:g}")
            compare(f"cov[lag={lag:g}]", params, lag, sweep.frame, seeds[index], True, {"kind": "lag", "regime": None})

        for index, rho in enumerate(regimes):
            self._status("regime", f"sigma_t*sqrt(dt)={rho:g}")
            p = params.model_copy(update={"sigma_t": rho / math.sqrt(sweep.regime_lag), "mu_t": 0.0})
            compare(
                f"regime[{rho:g}]", p, sweep.regime_lag, sweep.regime_frame, seeds[len(lags) + index],
                rho <= sweep.assert_regime_max, {"kind": "regime", "regime": rho},
            )

        points = sweep.grid_points() if sweep.grid else []
        if points:
            self._status("grid", f"{len(points)} parameter points")
        grid_seeds = _point_seeds(cfg.seed + 1, len(points))
        for point, seed in zip(points, grid_seeds):
            lag = point.pop("lag")
            p = RtSdeParams.model_validate({**params.model_dump(), **point})
            label = "grid[" + ",".join(f"{k}={v:g}" for k, v in point.items()) + f",lag={lag:g}]"
            compare(label, p, lag, sweep.frame, seed, True, {"kind": "grid", "regime": None, **point})
        return self._report("validate-cov", checks, {"points": _records(pd.DataFrame(rows))})

    # -- attention-check ------------------------------------------------

    def _instance(self, rng: np.random.Generator, heads: int = 1) -> tuple[np.ndarray, ProjectionSet]:
        seq = self.config.sequence
        Z = rng.standard_normal((seq.tokens, seq.n_model))
        proj = ProjectionSet.random(seq.n_model, seq.dim, rng, heads, seq.init)
        return Z, proj

    def isotropic_params(self) -> IsotropicParams:
        """Isotropic counterpart of the configured SDE (tangential channel, angular floor as query noise)."""
        sde, hp = self.config.sde, self.config.filter
        return IsotropicParams(
            mu=sde.mu_t, sigma2=sde.sigma_t ** 2, eta2=sde.eta_t ** 2,
            gamma2=sde.gamma_t ** 2 + hp.tau_theta2, omega=sde.omega, rope_base=sde.rope_base,
        )

    def attention_check(self) -> Report:
        cfg, seq, params, hp, tol = self.config, self.config.sequence, self.config.sde, self.config.filter, self.config.tolerances
        flat = params.model_copy(update={k: 0.0 for k in ("sigma_r", "sigma_t", "eta_r", "eta_t", "gamma_r", "gamma_t")})
        iso = self.isotropic_params()
        freqs = params.freqs_for(seq.dim)
        times = np.arange(seq.tokens, dtype=np.float64)
        worst = dict.fromkeys(
            ["oracle_rt_rfa", "oracle_isotropic", "flat_prior", "flat_prior_linear_score", "time_shift",
             "causal", "tangent_orthogonality", "row_stochastic", "consensus_bound"], 0.0,
        )
        self._status("attention", f"{seq.batch} instances, N={seq.tokens}, d={seq.dim}")
        for rng in _generators(cfg.seed, seq.batch):
            Z, proj = self._instance(rng)
            z_plus, _, trace = rt_rfa_forward(Z, proj, params, hp)
            naive = naive_rt_rfa(Z, proj, params, hp)
            worst["oracle_rt_rfa"] = max(
                worst["oracle_rt_rfa"], _max_abs(z_plus, naive["z_plus"]),
                _max_abs(trace.weights, naive["weights"]), _max_abs(trace.consensus, naive["consensus"]),
            )

            z_bar, iso_trace = isotropic_rfa_forward(Z, proj, iso, hp)
            naive_iso = naive_isotropic_rfa(Z, proj, iso, hp)
            worst["oracle_isotropic"] = max(
                worst["oracle_isotropic"], _max_abs(z_bar, naive_iso["z_bar"]), _max_abs(iso_trace.weights, naive_iso["weights"]),
            )

            _, _, flat_trace = rt_rfa_forward(Z, proj, flat, hp, variant="additive")
            Q, K, _, _ = project_and_normalize(Z, proj)
            robust = reference_rope_attention(Q.tokens, K.tokens, times, freqs.omega, flat_prior_score(hp, 2 * seq.dim), hp.beta_s)
            temperature = 2.0 * hp.robust_exponent(2 * seq.dim) / (hp.nu * hp.tau_theta2)
            linear = reference_rope_attention(Q.tokens, K.tokens, times, freqs.omega, lambda c: temperature * c, hp.beta_s)
            worst["flat_prior"] = max(worst["flat_prior"], _max_abs(flat_trace.weights, robust))
            worst["flat_prior_linear_score"] = max(worst["flat_prior_linear_score"], _max_abs(flat_trace.weights, linear))

            _, _, shifted = rt_rfa_forward(Z, proj, params, hp, times=times + 5.0)
            worst["time_shift"] = max(worst["time_shift"], _max_abs(trace.logits, shifted.logits))

            j = seq.tokens // 2
            perturbed = Z.copy()
            perturbed[j] += rng.standard_normal(seq.n_model)
            z_pert, _, _ = rt_rfa_forward(perturbed, proj, params, hp)
            worst["causal"] = max(worst["causal"], _max_abs(z_plus[:j], z_pert[:j]))

            worst["tangent_orthogonality"] = max(
                worst["tangent_orthogonality"], float(np.max(np.abs(np.sum(trace.directions * trace.increment, axis=-1)))),
            )
            masked = np.triu(np.ones_like(trace.weights, dtype=bool), k=1)
            worst["row_stochastic"] = max(
                worst["row_stochastic"], float(np.max(np.abs(trace.weights.sum(axis=-1) - 1.0))),
                float(np.max(np.abs(trace.weights[masked]), initial=0.0)),
            )
            worst["consensus_bound"] = max(worst["consensus_bound"], float(np.max(np.linalg.norm(trace.consensus, axis=-1) - 1.0)))

        checks = [
            Check.at_most("oracle_rt_rfa", worst["oracle_rt_rfa"], tol.oracle),
            Check.at_most("oracle_isotropic", worst["oracle_isotropic"], tol.oracle),
            Check.at_most("flat_prior", worst["flat_prior"], tol.oracle),
            Check.reported("flat_prior_linear_score", worst["flat_prior_linear_score"]),
            Check.at_most("time_shift", worst["time_shift"], tol.oracle),
            Check.at_most("causal", worst["causal"], 0.0),
            Check.at_most("tangent_orthogonality", worst["tangent_orthogonality"], tol.orthogonality),
            Check.at_most("row_stochastic", worst["row_stochastic"], tol.stochastic),
            Check.at_most("consensus_bound", worst["consensus_bound"], tol.stochastic),
        ]
        return self._report("attention-check", checks)

    # -- irls-descent ---------------------------------------------------

    def irls_descent(self) -> Report:
        cfg, seq, params, hp, tol = self.config, self.config.sequence, self.config.sde, self.config.filter, self.config.tolerances
        block = cfg.block.model_copy(update={"ffn": "zero"})
        step_r = block.resolve_step_r(seq.n_model)
        factor = 2.0 if block.residual == "tangent" else 1.0
        self._status("irls", f"{seq.batch} sequences x {block.layers} layers, step_r={step_r:.4g}")

        tables, medians = [], []
        min_magnitude = math.inf
        for index, rng in enumerate(_generators(cfg.seed, seq.batch)):
            Z, proj = self._instance(rng, seq.heads)
            _, traces = stack_forward(Z, block, shared_layers(Layer(proj, params), block.layers), hp)
            min_magnitude = min(min_magnitude, *(float(np.min(np.linalg.norm(t.stream_in @ proj.w_v, axis=-1))) for t in traces))
            table = irls_trace(traces)
            table.insert(0, "sequence", index)
            tables.append(table)
            medians.append(median_loss_by_layer(table).to_numpy())
        table = pd.concat(tables, ignore_index=True)

        relative_change = table["surrogate_change"] / np.maximum(1.0, table["loss"].abs())
        median_rise = max(
            (float(np.max(np.diff(m) / np.maximum(1.0, np.abs(m[:-1])), initial=-math.inf)) for m in medians),
            default=0.0,
        )
        checks = [
            Check.at_most("step_threshold", step_r / (factor * min_magnitude), 1.0),
            Check.at_most("surrogate_descent", float(relative_change.max()), tol.descent, asserted=hp.beta_s == 1.0 and seq.init != "random"),
            Check.reported("median_loss_rise", median_rise if math.isfinite(median_rise) else 0.0),
            self._aligned_check(block),
            self._contraction_check(block),
        ]
        per_layer = (
            table.groupby(["sequence", "layer"])
            .agg(median_loss=("loss", "median"), max_surrogate_change=("surrogate_change", "max"))
            .reset_index()
        )
        return self._report("irls-descent", checks, {"layers": _records(per_layer)})

    def _still_params(self):
        return self.config.sde.model_copy(update={"omega": (0.0,) * self.config.sequence.dim})

    def _aligned_check(self, block) -> Check:
        seq, hp = self.config.sequence, self.config.filter
        rng = _generators(self.config.seed + 1, 1)[0]
        direction = normalize(rng.standard_normal(2 * seq.dim))
        Z = np.outer(1.0 + rng.random(seq.tokens), direction)
        layer = Layer(ProjectionSet.identity(seq.dim), self._still_params())
        _, traces = stack_forward(Z, block.model_copy(update={"step_r": block.resolve_step_r(2 * seq.dim)}), shared_layers(layer, block.layers), hp)
        scale = max(1.0, max(float(np.max(t.attention[0].evidence_mass)) for t in traces))
        return Check.at_most("aligned_zero_loss", max(float(np.max(np.abs(t.loss))) for t in traces) / scale, self.config.tolerances.descent)

    def _contraction_check(self, block) -> Check:
        seq, hp = self.config.sequence, self.config.filter
        d = seq.dim
        anchor = np.zeros(2 * d)
        anchor[0] = 1.0
        moving = np.zeros(2 * d)
        moving[0], moving[1] = math.cos(0.8), math.sin(0.8)
        Z = np.stack([2.0 * anchor, 2.0 * moving])
        layer = Layer(ProjectionSet.identity(d), self._still_params())
        _, traces = stack_forward(Z, block.model_copy(update={"step_r": block.resolve_step_r(2 * d)}), shared_layers(layer, block.layers), hp)
        angles = [float(np.arccos(np.clip(normalize(traces[0].stream_in[1]) @ anchor, -1.0, 1.0)))]
        angles += [float(np.arccos(np.clip(normalize(t.z_out[1]) @ anchor, -1.0, 1.0))) for t in traces]
        worst = float(np.max(np.diff(angles)))
        return Check(name="contraction_monotone", value=worst, tolerance=0.0, passed=worst < 0)


# ------------------------------
# Command entry points
# ------------------------------

def cmd_simulate(config: ExperimentConfig, out: str | Path, status_callback=None) -> Report:
    """Write the trajectory CSV to `out` and its report to `out` with a .json suffix."""
    out = Path(out)
    report = ValidationHarness(config, status_callback).simulate(out)
    write_report(report, out.with_suffix(".json"))
    return report


def cmd_validate_covariance(config: ExperimentConfig, out: str | Path, status_callback=None) -> Report:
    report = ValidationHarness(config, status_callback).validate_covariance()
    write_report(report, out)
    return report


def cmd_attention_check(config: ExperimentConfig, out: str | Path, status_callback=None) -> Report:
    report = ValidationHarness(config, status_callback).attention_check()
    write_report(report, out)
    return report


def cmd_irls_descent(config: ExperimentConfig, out: str | Path, status_callback=None) -> Report:
    report = ValidationHarness(config, status_callback).irls_descent()
    write_report(report, out)
    return report
