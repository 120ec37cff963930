"""
Parameter recovery studies.

``run_calibration`` runs one simulate-then-fit cycle and checks which 95%
credible intervals contain the generating values. ``run_replications``
repeats the cycle on independent seeds, persists one estimate table per
replication and reduces them with ``build_report``:

- bias = mean(estimate) - truth, MC error SD(estimate) / sqrt(R)
- relative SE bias = mean(posterior SD) / SD(estimate) - 1, MC error by the
  delta method: ratio * sqrt(var(posterior SD) / (R * mean(posterior SD)^2) + 1 / (2 (R - 1)))
- coverage = share of intervals containing truth, MC error sqrt(c (1 - c) / R)
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from .inference import McmcConfig, fit, summarize
from .model import Indeterminate
from .model_spec import DistalMode, ModelSpec
from .report_builder import ReportBuilder
from .simulate import SimulationPlan, simulate
from .utils.errors import DyadIrtError, InvalidArgumentError
from .utils.parameter_filter import ParameterFilter
from .utils.rng import replication_seed, substream

if TYPE_CHECKING:
    from .inference import PosteriorSummary

logger = logging.getLogger(__name__)

ESTIMATE_COLUMNS = ("replication", "seed", "parameter", "truth", "estimate", "sd", "lower", "upper", "rhat")
REPORT_COLUMNS = (
    "parameter",
    "truth",
    "mean_estimate",
    "bias",
    "bias_mc_error",
    "mean_sd",
    "empirical_sd",
    "relative_se_bias",
    "relative_se_bias_mc_error",
    "coverage",
    "coverage_mc_error",
    "n",
)
CALIBRATION_COLUMNS = ("parameter", "truth", "mean", "lower", "upper", "covered", "rhat", "converged")

_Z = 1.959963984540054
# iid normal draws behind each self-test estimate; unit SD
_SELF_TEST_SD = 1.0


@dataclass(frozen=True, eq=False)
class RecoveryConfig:
    """
    One recovery study.

    Attributes:
        plan: What to simulate.
        model_spec: What to fit.
        mcmc: Sampler settings; the seed is replaced per replication.
        replications: Number of simulate-then-fit cycles, at least 2.
            Default: `20`.
        seed: Master seed of the replication substreams.
            Default: `0`.
        self_test: Replace the fit by the mean of iid normals around the truth.
            Default: `False`.
        self_test_size: Draws behind each self-test estimate.
            Default: `50`.
        parameters: Glob patterns selecting the reported parameters; empty means all.
        threads: Worker processes over replications.
            Default: `1`.
    """

    plan: SimulationPlan
    model_spec: ModelSpec = field(default_factory=ModelSpec)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    replications: int = 20
    seed: int = 0
    self_test: bool = False
    self_test_size: int = 50
    parameters: tuple[str, ...] = ()
    threads: int = 1

    def __post_init__(self) -> None:
        if self.self_test_size < 2:  # noqa: PLR2004
            msg = f"self_test_size must be >= 2, got {self.self_test_size}"
            raise InvalidArgumentError(msg)


# -- single run -------------------------------------------------------------


def fit_summary(
    model_spec: ModelSpec, data_seed: int, plan: SimulationPlan, mcmc: McmcConfig
) -> tuple[PosteriorSummary, dict[str, float]]:
    """Simulate from ``plan`` at ``data_seed`` and summarize the fit."""
    simulated = simulate(plan.config(data_seed))
    spec = model_spec
    if spec.distal is DistalMode.SEQUENTIAL:
        spec = spec.measurement_only()
    draws = fit(spec, simulated.to_data(), mcmc)
    return summarize(draws), simulated.truth


def run_calibration(config: RecoveryConfig) -> pd.DataFrame:
    """One simulate-then-fit cycle: truth against the 95% interval of every reported parameter."""
    summary, truth = fit_summary(config.model_spec, config.seed, config.plan, replace(config.mcmc, seed=config.seed))
    selected = _selected(summary.parameters, truth, config.parameters)
    threshold = summary.rhat_threshold
    rows = []
    for name in selected:
        row = summary[name]
        converged = not isinstance(row.rhat, Indeterminate) and row.rhat <= threshold
        rows.append(
            (name, truth[name], row.mean, row.lower, row.upper, row.lower <= truth[name] <= row.upper, row.rhat, converged)
        )
    table = pd.DataFrame(rows, columns=list(CALIBRATION_COLUMNS))
    if len(table):
        logger.info(
            "Calibration: %d of %d intervals contain the truth", int(table["covered"].sum()), len(table)
        )
        if not table["converged"].all():
            logger.warning("R-hat above %.3g for: %s", threshold, ", ".join(table.loc[~table["converged"], "parameter"]))
    return table


def _selected(parameters: tuple[str, ...], truth: dict[str, float], patterns: tuple[str, ...]) -> list[str]:
    names = [name for name in parameters if name in truth]
    return ParameterFilter.include(names, list(patterns)) if patterns else names


# -- replications -----------------------------------------------------------


def run_replication(config: RecoveryConfig, replication: int) -> pd.DataFrame:
    """Estimates of one replication, one row per reported parameter."""
    seed = replication_seed(config.seed, replication)
    if config.self_test:
        return _self_test_replication(config, replication, seed)
    summary, truth = fit_summary(config.model_spec, seed, config.plan, replace(config.mcmc, seed=seed, threads=1))
    rows = [
        (
            replication,
            seed,
            name,
            truth[name],
            summary[name].mean,
            summary[name].sd,
            summary[name].lower,
            summary[name].upper,
            _rhat_value(summary[name].rhat),
        )
        for name in _selected(summary.parameters, truth, config.parameters)
    ]
    return pd.DataFrame(rows, columns=list(ESTIMATE_COLUMNS))


def _self_test_replication(config: RecoveryConfig, replication: int, seed: int) -> pd.DataFrame:
    truth = config.plan.truth()
    names = _selected(tuple(truth), truth, config.parameters)
    rng = substream(seed, 0)
    n = config.self_test_size
    se = _SELF_TEST_SD / math.sqrt(n)
    rows = []
    for name in names:
        estimate = float(np.mean(rng.normal(truth[name], _SELF_TEST_SD, n)))
        rows.append((replication, seed, name, truth[name], estimate, se, estimate - _Z * se, estimate + _Z * se, math.nan))
    return pd.DataFrame(rows, columns=list(ESTIMATE_COLUMNS))


def _rhat_value(value: float | Indeterminate) -> float:
    return math.nan if isinstance(value, Indeterminate) else float(value)


def _attempt(config: RecoveryConfig, replication: int) -> tuple[pd.DataFrame | None, str | None]:
    try:
        return run_replication(config, replication), None
    except (DyadIrtError, np.linalg.LinAlgError, FloatingPointError) as err:
        return None, f"{type(err).__name__}: {err}"


def run_replications(config: RecoveryConfig, output_dir: Path | None = None) -> RecoveryReport:
    """
    Run every replication and reduce the estimates.

    Failed replications are recorded and excluded. With ``output_dir`` the
    per-replication tables and the failure list are persisted there, and
    ``build_report`` over ``load_replications(output_dir)`` reproduces the result.
    """
    if config.replications < 2:  # noqa: PLR2004
        msg = f"A recovery study needs at least 2 replications, got {config.replications}"
        raise InvalidArgumentError(msg)
    worker = partial(_attempt, config)
    indices = range(config.replications)
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=min(config.threads, config.replications)) as executor:
            outcomes = list(executor.map(worker, indices))
    else:
        outcomes = [worker(r) for r in indices]

    tables = []
    failures = []
    for r, (table, error) in zip(indices, outcomes):
        if table is None:
            logger.warning("Replication %d failed: %s", r, error)
            failures.append((r, replication_seed(config.seed, r), error))
            continue
        tables.append(table)
        if output_dir is not None:
            path = output_dir / "replications" / f"rep-{r:04d}.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            table.to_csv(path, index=False, float_format="%.17g")
    failure_table = pd.DataFrame(failures, columns=["replication", "seed", "error"])
    if output_dir is not None:
        path = output_dir / "failures.csv"
        failure_table.to_csv(path, index=False)
    estimates = pd.concat(tables, ignore_index=True) if tables else pd.DataFrame(columns=list(ESTIMATE_COLUMNS))
    logger.info("%d of %d replications completed", len(tables), config.replications)
    return build_report(estimates, n_failed=len(failures))


def load_replications(directory: Path) -> tuple[pd.DataFrame, int]:
    """Estimates of every persisted replication and the number of recorded failures."""
    paths = sorted((directory / "replications").glob("rep-*.csv"))
    if not paths:
        msg = f"No replication files under {directory / 'replications'}"
        raise InvalidArgumentError(msg)
    estimates = pd.concat([pd.read_csv(path) for path in paths], ignore_index=True)
    failures_path = directory / "failures.csv"
    n_failed = len(pd.read_csv(failures_path)) if failures_path.exists() else 0
    return estimates, n_failed


# -- report -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RecoveryReport:
    table: pd.DataFrame
    n_replications: int
    n_failed: int = 0

    def __getitem__(self, parameter: str) -> pd.Series:
        return self.table.set_index("parameter").loc[parameter]


def build_report(estimates: pd.DataFrame, *, n_failed: int = 0) -> RecoveryReport:
    """Reduce per-replication estimates; rows follow first appearance, independent of replication order."""
    estimates = estimates.sort_values("replication", kind="stable")
    order = list(dict.fromkeys(estimates["parameter"]))
    rows = [_report_row(name, estimates.loc[estimates["parameter"] == name]) for name in order]
    n_replications = int(estimates["replication"].nunique()) if len(estimates) else 0
    return RecoveryReport(pd.DataFrame(rows, columns=list(REPORT_COLUMNS)), n_replications, n_failed)


def _report_row(name: str, rows: pd.DataFrame) -> tuple[object, ...]:
    rows = rows.sort_values("replication")
    estimate = rows["estimate"].to_numpy(dtype=float)
    sd = rows["sd"].to_numpy(dtype=float)
    truth = float(rows["truth"].iloc[0])
    r = estimate.size
    mean_estimate = math.fsum(estimate) / r
    empirical_sd = float(np.std(estimate, ddof=1)) if r > 1 else math.nan
    mean_sd = math.fsum(sd) / r
    bias_mc = empirical_sd / math.sqrt(r) if r > 1 else math.nan
    if r > 1 and empirical_sd > 0:
        ratio = mean_sd / empirical_sd
        relative_bias = ratio - 1.0
        sd_term = float(np.var(sd, ddof=1)) / (r * mean_sd**2) if mean_sd > 0 else 0.0
        relative_mc = ratio * math.sqrt(sd_term + 1.0 / (2.0 * (r - 1)))
    else:
        relative_bias = relative_mc = math.nan
    covered = (rows["lower"].to_numpy(dtype=float) <= truth) & (truth <= rows["upper"].to_numpy(dtype=float))
    coverage = float(covered.mean())
    coverage_mc = math.sqrt(coverage * (1.0 - coverage) / r)
    return (
        name,
        truth,
        mean_estimate,
        mean_estimate - truth,
        bias_mc,
        mean_sd,
        empirical_sd,
        relative_bias,
        relative_mc,
        coverage,
        coverage_mc,
        r,
    )


def plot_series(report: RecoveryReport) -> pd.DataFrame:
    """Long table of bias and relative SE bias with +-1.96 MC-error bars."""
    frames = []
    for metric, error in (("bias", "bias_mc_error"), ("relative_se_bias", "relative_se_bias_mc_error")):
        value = report.table[metric]
        half = _Z * report.table[error]
        frames.append(
            pd.DataFrame(
                {
                    "parameter": report.table["parameter"],
                    "metric": metric,
                    "value": value,
                    "lower": value - half,
                    "upper": value + half,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)


def render_report(report: RecoveryReport, patterns: list[str] | None = None) -> tuple[str, pd.DataFrame]:
    """Text table plus plot-ready series, restricted to the parameters the filter selects."""
    table = report.table
    if patterns:
        table = table.loc[table["parameter"].isin(ParameterFilter.include(table["parameter"], patterns))]
    filtered = RecoveryReport(table.reset_index(drop=True), report.n_replications, report.n_failed)
    builder = ReportBuilder("Recovery report")
    builder.add_facts(
        "Replications",
        [("completed", report.n_replications), ("failed and excluded", report.n_failed)],
    )
    builder.add_text(
        "Formulas",
        "\n".join(
            [
                "- bias = mean(estimate) - truth; MC error = SD(estimate) / sqrt(R)",
                "- relative SE bias = mean(posterior SD) / SD(estimate) - 1; MC error = ratio * "
                "sqrt(var(posterior SD) / (R mean(posterior SD)^2) + 1 / (2 (R - 1)))",
                "- coverage = share of 95% intervals containing truth; MC error = sqrt(c (1 - c) / R)",
                "- error bars span +-1.96 MC errors",
            ]
        ),
    )
    builder.add_table("Parameters", filtered.table)
    return builder.build(), plot_series(filtered)
