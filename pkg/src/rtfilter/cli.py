"""Command-line entry: rtfilter simulate|validate-cov|attention-check|irls-descent."""

import functools
import logging
import sys
from pathlib import Path
from typing import Callable, Optional

import click
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import RtFilterError
from .harness import (
    Report,
    cmd_attention_check,
    cmd_irls_descent,
    cmd_simulate,
    cmd_validate_covariance,
)
from .log import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_ERROR = 2

DEFAULT_OUTPUTS = {
    "simulate": "trajectory.csv",
    "validate-cov": "validate-cov.json",
    "attention-check": "attention-check.json",
    "irls-descent": "irls-descent.json",
}


def render_checks(report: Report, console: Console) -> None:
    table = Table(title=f"{report.command} ({report.experiment}, seed {report.seed})")
    table.add_column("check")
    table.add_column("value", justify="right")
    table.add_column("tolerance", justify="right")
    table.add_column("result")
    for check in report.checks:
        if not check.asserted:
            result = "[dim]reported[/dim]"
        elif check.passed:
            result = "[green]pass[/green]"
        else:
            result = "[bold red]FAIL[/bold red]"
        table.add_row(check.name, f"{check.value:.6g}", f"{check.tolerance:.3g}", result)
    console.print(table)


def experiment_options(fn: Callable) -> Callable:
    @click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False, path_type=Path),
                  help="Experiment config (JSON).")
    @click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None,
                  help="Output path; overrides the config's `output`.")
    @click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the config seed.")
    @click.option("--paths", type=click.IntRange(min=1), default=None, help="Override the Monte Carlo path count.")
    @click.option("--log-level", default="INFO", show_default=True,
                  type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        return fn(*args, **kwargs)

    return wrapper


def _run(command: str, runner: Callable, config_path: Path, out: Optional[Path], seed: Optional[int],
         paths: Optional[int], log_level: str) -> None:
    configure_logging(log_level.upper())
    try:
        config: ExperimentConfig = load_config(config_path).with_overrides(seed=seed, paths=paths)
        target = out or Path(config.output or DEFAULT_OUTPUTS[command])
        report = runner(config, target)
    except (RtFilterError, ValidationError) as exc:
        logger.error("%s failed: %s", command, exc)
        sys.exit(EXIT_ERROR)

    render_checks(report, Console())
    failed = [c.name for c in report.checks if c.asserted and not c.passed]
    if failed:
        logger.error("%d asserted check(s) failed: %s", len(failed), ", ".join(failed))
        sys.exit(EXIT_CHECKS_FAILED)
    logger.info("all asserted checks passed, report written next to %s", target)
    sys.exit(EXIT_OK)


@click.group()
@click.version_option(__version__, prog_name="rtfilter")
def cli():
    """Radial-tangential filtering: simulation, covariance validation and attention checks."""


@cli.command()
@experiment_options
def simulate(config_path, out, seed, paths, log_level):
    """Simulate one trajectory to CSV, with ensemble statistics in a JSON report beside it."""
    _run("simulate", cmd_simulate, config_path, out, seed, paths, log_level)


@cli.command("validate-cov")
@experiment_options
def validate_cov(config_path, out, seed, paths, log_level):
    """Compare Monte Carlo propagated covariance with the closed form."""
    _run("validate-cov", cmd_validate_covariance, config_path, out, seed, paths, log_level)


@cli.command("attention-check")
@experiment_options
def attention_check(config_path, out, seed, paths, log_level):
    """Check vectorized attention against the loop oracles and its structural invariants."""
    _run("attention-check", cmd_attention_check, config_path, out, seed, paths, log_level)


@cli.command("irls-descent")
@experiment_options
def irls_descent(config_path, out, seed, paths, log_level):
    """Track the directional loss across stacked shared-weight layers."""
    _run("irls-descent", cmd_irls_descent, config_path, out, seed, paths, log_level)
