from __future__ import annotations

from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import replace
from enum import Enum
from pathlib import Path
from typing import Annotated, Any

import numpy as np
import pandas as pd
import typer
from rich.console import Console
from rich.table import Table

from . import __version__
from .design import PATTERN_DESCRIPTIONS, DyadDesign, IdentificationReport, ParameterStatus, check_identification
from .inference import McmcConfig, PosteriorDraws, PosteriorSummary, eap_latent_scores, fit, summarize, summarize_partition
from .model_spec import DistalMode
from .recovery import build_report, load_replications, render_report, run_calibration, run_replications
from .report_builder import ReportBuilder, format_value
from .run_config import RunConfig
from .simulate import covariate_tables, simulate as simulate_data
from .utils.csv_io import (
    latent_table,
    read_design,
    read_latent_moments,
    read_latent_truth,
    write_design,
    write_distal,
    write_dyad_covariates,
    write_individuals,
    write_latent_moments,
    write_responses,
    write_truth,
)
from .utils.errors import DyadIrtError, IdentificationError, InvalidStateError
from .utils.log import configure_logging
from .utils.manifest import Manifest
from .workflows import PooledEstimates, pool_imputations

app = typer.Typer(
    help="Dyadic item response models: design checks, simulation, fitting, scoring and recovery studies.",
    rich_markup_mode="rich",
    no_args_is_help=True,
)
console = Console()
err_console = Console(stderr=True)

EXIT_INPUT_ERROR = 1
EXIT_DIAGNOSTIC_FAILURE = 2


def version_callback(value: bool) -> None:  # noqa: FBT001
    if value:
        console.print(f"dyad-irt version {__version__}")
        raise typer.Exit


class DistalChoice(str, Enum):
    NONE = "none"
    JOINT = "joint"
    SEQUENTIAL = "sequential"


ConfigOption = Annotated[
    Path | None,
    typer.Option("--config", "-c", help="TOML run configuration.", exists=True, dir_okay=False),
]
SetOption = Annotated[
    list[str] | None,
    typer.Option("--set", help="Override any config value, e.g. 'mcmc.chains=2'. Can be used multiple times."),
]
ManifestOption = Annotated[
    Path | None,
    typer.Option("--manifest", help="Re-run with the configuration recorded in a manifest.json.", exists=True),
]
OutputOption = Annotated[
    Path | None,
    typer.Option("--output", "-o", help="Output directory. Default: output.directory or 'dyad_irt_out'."),
]
ThreadsOption = Annotated[
    int | None,
    typer.Option("--threads", min=1, help="Cap on worker processes. Default: 1 (in process)."),
]


@app.callback()
def main_options(
    *,
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging.")] = False,
    version: Annotated[  # noqa: ARG001
        bool,
        typer.Option("--version", callback=version_callback, is_eager=True, help="Show version and exit"),
    ] = False,
) -> None:
    configure_logging(verbose=verbose)


@contextmanager
def _exit_codes() -> Iterator[None]:
    """Map package errors to exit codes: identification failures 2, everything else 1."""
    try:
        yield
    except IdentificationError as err:
        err_console.print(f"❌ {err}", style="red")
        raise typer.Exit(code=EXIT_DIAGNOSTIC_FAILURE) from err
    except DyadIrtError as err:
        err_console.print(f"❌ {err}", style="red")
        raise typer.Exit(code=EXIT_INPUT_ERROR) from err


@app.command("check-design")
def check_design(
    *,
    edges: Annotated[Path, typer.Argument(help="Edge list CSV with actor_id, partner_id columns.", exists=True)],
    individuals: Annotated[
        Path | None,
        typer.Option("--individuals", help="Individuals CSV (id, gender, cluster, block, group, covariates)."),
    ] = None,
) -> None:
    """Check which decomposition parameters the design identifies. Exit 2 when any is not identified."""
    with _exit_codes():
        report = check_identification(read_design(edges, individuals).design)
    _print_identification(report)
    if not report.all_identified:
        raise typer.Exit(code=EXIT_DIAGNOSTIC_FAILURE)


@app.command()
def simulate(
    *,
    config_path: ConfigOption = None,
    assignments: SetOption = None,
    manifest_path: ManifestOption = None,
    output: OutputOption = None,
    seed: Annotated[int | None, typer.Option("--seed", help="Simulation seed. Default: simulation.seed or 0.")] = None,
    distal: Annotated[
        DistalChoice | None, typer.Option("--distal", help="Also simulate distal outcomes unless 'none'.")
    ] = None,
    interactions: Annotated[
        bool | None,
        typer.Option("--interactions/--no-interactions", help="Trait products in the distal regression.", show_default=False),
    ] = None,
) -> None:
    """Simulate a design, item responses and distal outcomes with their generating values."""
    with _exit_codes():
        overrides = _get_overrides(output=output, seed=seed, distal=distal, interactions=interactions)
        config = _load_config(config_path, manifest_path, assignments, overrides)
        output_dir = _prepare_output(config)
        plan = config.simulation_plan()
        sim_seed = config.simulation_seed()
        simulated = simulate_data(plan.config(sim_seed))

        design = plan.design
        outputs = ["edges.csv", "responses.csv", "truth.csv", "latents.csv"]
        individual_covariates, dyad_covariates = covariate_tables(design, simulated.config.covariates)
        write_design(design, output_dir / "edges.csv")
        if individual_covariates is not None or _has_labels(design):
            write_individuals(design, output_dir / "individuals.csv", individual_covariates)
            outputs.append("individuals.csv")
        write_responses(output_dir / "responses.csv", design, simulated.responses, plan.item_bank.item_ids)
        if simulated.distal is not None:
            write_distal(output_dir / "distal.csv", design, simulated.distal)
            outputs.append("distal.csv")
        if dyad_covariates is not None:
            write_dyad_covariates(output_dir / "dyad_covariates.csv", dyad_covariates)
            outputs.append("dyad_covariates.csv")
        write_truth(output_dir / "truth.csv", simulated.truth)
        latent_table(design, simulated.latents).to_csv(output_dir / "latents.csv", index=False, float_format="%.17g")
        _write_manifest("simulate", config, output_dir, outputs, seeds={"simulation": sim_seed})

    console.print(f"✅ Wrote simulated data to '{output_dir}'", style="green")
    console.print(
        f"{design.n_individuals} individuals, {design.n_dyads} directed dyads, {len(simulated.responses)} responses",
        style="blue",
    )


@app.command(name="fit")
def fit_command(  # noqa: PLR0913
    *,
    config_path: ConfigOption = None,
    assignments: SetOption = None,
    manifest_path: ManifestOption = None,
    output: OutputOption = None,
    threads: ThreadsOption = None,
    distal: Annotated[
        DistalChoice | None, typer.Option("--distal", help="Distal regression: none, joint or sequential.")
    ] = None,
    interactions: Annotated[
        bool | None,
        typer.Option("--interactions/--no-interactions", help="Trait products in the distal regression.", show_default=False),
    ] = None,
    gender: Annotated[
        bool | None, typer.Option("--gender/--no-gender", help="Gender mean shift of the actor effect.", show_default=False)
    ] = None,
    drop_counterpart: Annotated[
        bool | None,
        typer.Option("--drop-counterpart", help="Also drop the partner's rating when a rating is invalid."),
    ] = None,
    force: Annotated[
        bool | None, typer.Option("--force", help="Fit even when the design does not identify a freed parameter.")
    ] = None,
    strict: Annotated[
        bool | None, typer.Option("--strict", help="Exit 2 when any R-hat is above the threshold.")
    ] = None,
) -> None:
    """Fit the model: summary.csv, draws.csv, latent moments, diagnostics.md and manifest.json."""
    with _exit_codes():
        overrides = _get_overrides(
            output=output,
            threads=threads,
            distal=distal,
            interactions=interactions,
            gender=gender,
            drop_counterpart=drop_counterpart,
            force=force,
            strict=strict,
        )
        config = _load_config(config_path, manifest_path, assignments, overrides)
        output_dir = _prepare_output(config)
        loaded = config.load_data()
        spec = config.model_spec()
        mcmc = config.mcmc_config()
        if loaded.response_file.dropped:
            console.print(f"Dropped {loaded.response_file.dropped} invalid rating(s)", style="yellow")

        sequential = spec.distal is DistalMode.SEQUENTIAL
        fit_spec = spec.measurement_only() if sequential else spec
        draws = fit(fit_spec, loaded.data, replace(mcmc, retain_latents=mcmc.retain_latents or sequential))
        summary = summarize(draws)

        outputs = ["summary.csv", "diagnostics.md"]
        summary.to_frame().to_csv(output_dir / "summary.csv", index=False, float_format="%.17g")
        if config.output.get("write_draws", True):
            draws.to_frame().to_csv(output_dir / "draws.csv", index=False, float_format="%.17g")
            outputs.append("draws.csv")
        if draws.has_latent_moments:
            write_latent_moments(output_dir / "latent_moments.csv", draws)
            outputs.append("latent_moments.csv")
        pooled = None
        if sequential:
            pooled = pool_imputations(spec, loaded.data, draws, spec.imputations)
            pooled.to_frame().to_csv(output_dir / "pooled.csv", index=False, float_format="%.17g")
            outputs.append("pooled.csv")
        (output_dir / "diagnostics.md").write_text(_diagnostics(draws, summary, mcmc, pooled), encoding="utf-8")
        _write_manifest(
            "fit",
            config,
            output_dir,
            outputs,
            seeds={"mcmc": mcmc.seed},
            category_map={str(k): v for k, v in loaded.response_file.category_map.items()},
        )

    console.print(f"✅ Wrote fit to '{output_dir}'", style="green")
    flagged = summary.flagged()
    if flagged:
        console.print(f"R-hat above {summary.rhat_threshold:g} for: {', '.join(flagged)}", style="yellow")
        if config.output.get("strict", False):
            raise typer.Exit(code=EXIT_DIAGNOSTIC_FAILURE)


@app.command()
def score(
    *,
    fit_dir: Annotated[Path, typer.Argument(help="Directory written by 'fit'.", exists=True, file_okay=False)],
    truth: Annotated[
        Path | None, typer.Option("--truth", help="True latents (id, role, value), e.g. latents.csv from 'simulate'.")
    ] = None,
    output: Annotated[Path | None, typer.Option("--output", "-o", help="Default: <fit_dir>/scores.csv.")] = None,
) -> None:
    """EAP scores with posterior SDs: alpha and beta per individual, gamma per directed dyad."""
    with _exit_codes():
        scores = eap_latent_scores(_moments(fit_dir)).to_frame()
        target = output or fit_dir / "scores.csv"
        scores.to_csv(target, index=False, float_format="%.17g")
        correlations = _truth_correlations(scores, read_latent_truth(truth)) if truth is not None else None

    console.print(f"✅ Wrote {len(scores)} latent scores to '{target}'", style="green")
    if correlations is not None:
        table = Table(title="Score-truth correlation")
        table.add_column("role")
        table.add_column("r", justify="right")
        table.add_column("n", justify="right")
        for role, (r, n) in correlations.items():
            table.add_row(role, f"{r:.3f}", str(n))
        console.print(table)


@app.command()
def recover(  # noqa: PLR0913
    *,
    config_path: ConfigOption = None,
    assignments: SetOption = None,
    manifest_path: ManifestOption = None,
    output: OutputOption = None,
    threads: ThreadsOption = None,
    replications: Annotated[
        int | None, typer.Option("--replications", "-r", help="Number of replications (at least 2).")
    ] = None,
    self_test: Annotated[
        bool | None, typer.Option("--self-test", help="Replace fits by means of iid normals around the truth.")
    ] = None,
    calibrate: Annotated[
        bool, typer.Option("--calibrate", help="Also run one calibration fit (calibration.csv).")
    ] = False,
    report_only: Annotated[
        bool, typer.Option("--report-only", help="Rebuild the report from persisted replication files.")
    ] = False,
    parameters: Annotated[
        list[str] | None, typer.Option("--parameter", "-p", help="Glob pattern of reported parameters. Repeatable.")
    ] = None,
) -> None:
    """Simulate-then-fit replications: bias and relative SE bias with MC errors."""
    with _exit_codes():
        overrides = _get_overrides(
            output=output, threads=threads, replications=replications, self_test=self_test, parameters=parameters
        )
        config = _load_config(config_path, manifest_path, assignments, overrides)
        output_dir = _prepare_output(config)
        if report_only:
            estimates, n_failed = load_replications(output_dir)
            report = build_report(estimates, n_failed=n_failed)
            outputs = ["report.md", "plot_data.csv"]
        else:
            recovery_config = config.recovery_config()
            outputs = ["report.md", "plot_data.csv", "failures.csv", "replications/"]
            if calibrate:
                run_calibration(recovery_config).to_csv(output_dir / "calibration.csv", index=False, float_format="%.17g")
                outputs.append("calibration.csv")
            report = run_replications(recovery_config, output_dir)
        text, series = render_report(report, list(config.recovery.get("parameters", [])) or None)
        (output_dir / "report.md").write_text(text, encoding="utf-8")
        series.to_csv(output_dir / "plot_data.csv", index=False, float_format="%.17g")
        if not report_only:
            _write_manifest(
                "recover",
                config,
                output_dir,
                outputs,
                seeds={"master": config.simulation_seed(), "mcmc": config.mcmc_config().seed},
            )

    console.print(f"✅ Wrote recovery report to '{output_dir / 'report.md'}'", style="green")
    console.print(f"{report.n_replications} replications, {report.n_failed} failed", style="blue")


@app.command(name="summarize")
def summarize_command(
    *,
    draws_path: Annotated[Path, typer.Argument(help="draws.csv written by 'fit'.", exists=True, dir_okay=False)],
    output: Annotated[
        Path | None, typer.Option("--output", "-o", help="Default: summary.csv next to the draws.")
    ] = None,
    parameters: Annotated[
        list[str] | None, typer.Option("--parameter", "-p", help="Glob pattern of parameters. Repeatable.")
    ] = None,
    rhat_threshold: Annotated[float, typer.Option("--rhat-threshold", min=1.0, help="R-hat flag threshold.")] = 1.05,
    split: Annotated[bool, typer.Option("--split", help="Split-chain R-hat.")] = False,
) -> None:
    """Recompute the posterior summary from a persisted draws table."""
    with _exit_codes():
        draws = PosteriorDraws.from_frame(pd.read_csv(draws_path), rhat_threshold=rhat_threshold, split_rhat=split)
        summary = summarize(draws, parameters)
        target = output or draws_path.with_name("summary.csv")
        summary.to_frame().to_csv(target, index=False, float_format="%.17g")

    console.print(f"✅ Wrote summary of {len(summary.rows)} parameters to '{target}'", style="green")
    _print_summary(summary)


def _get_overrides(**values: Any) -> dict[str, dict[str, Any]]:  # noqa: ANN401
    overrides: dict[str, dict[str, Any]] = {}
    if values.get("output") is not None:
        overrides.setdefault("output", {})["directory"] = str(values["output"])
    if values.get("seed") is not None:
        overrides.setdefault("simulation", {})["seed"] = values["seed"]
    if values.get("threads") is not None:
        overrides.setdefault("mcmc", {})["threads"] = values["threads"]
    if values.get("force") is not None:
        overrides.setdefault("mcmc", {})["force"] = values["force"]
    if values.get("distal") is not None:
        overrides.setdefault("model", {})["distal"] = values["distal"].value
    if values.get("interactions") is not None:
        overrides.setdefault("model", {})["distal_interactions"] = values["interactions"]
    if values.get("gender") is not None:
        overrides.setdefault("model", {})["gender_mean"] = values["gender"]
    if values.get("drop_counterpart") is not None:
        overrides.setdefault("data", {})["drop_counterpart"] = values["drop_counterpart"]
    if values.get("strict") is not None:
        overrides.setdefault("output", {})["strict"] = values["strict"]
    if values.get("replications") is not None:
        overrides.setdefault("recovery", {})["replications"] = values["replications"]
    if values.get("self_test") is not None:
        overrides.setdefault("recovery", {})["self_test"] = values["self_test"]
    if values.get("parameters"):
        overrides.setdefault("recovery", {})["parameters"] = list(values["parameters"])
    return overrides


def _load_config(
    config_path: Path | None,
    manifest_path: Path | None,
    assignments: list[str] | None,
    overrides: dict[str, dict[str, Any]],
) -> RunConfig:
    if manifest_path is not None:
        manifest = Manifest.read(manifest_path)
        config = RunConfig.from_sections(manifest.config, **overrides)
        if "directory" not in config.output:
            config.output["directory"] = str(manifest_path.resolve().parent)
        return config
    return RunConfig.from_toml(config_path, assignments=assignments, **overrides)


def _prepare_output(config: RunConfig) -> Path:
    output_dir = config.output_dir()
    output_dir.mkdir(parents=True, exist_ok=True)
    return output_dir


def _write_manifest(
    command: str,
    config: RunConfig,
    output_dir: Path,
    outputs: list[str],
    *,
    seeds: dict[str, int],
    category_map: dict[str, int] | None = None,
) -> None:
    manifest = Manifest(
        command=command,
        version=__version__,
        config=config.sections(),
        seeds=seeds,
        outputs=outputs,
        category_map=category_map or {},
    )
    manifest.write(output_dir)


def _has_labels(design: DyadDesign) -> bool:
    return any(
        any(label is not None for label in labels)
        for labels in (design.genders, design.clusters, design.blocks, design.groups)
    )


def _moments(fit_dir: Path) -> PosteriorDraws:
    path = fit_dir / "latent_moments.csv"
    if not path.exists():
        msg = f"{fit_dir} holds no latent moments"
        raise InvalidStateError(msg, hint="Run 'dyad-irt fit' with this directory as output, then score it")
    return read_latent_moments(path)


def _truth_correlations(scores: pd.DataFrame, truth: pd.DataFrame) -> dict[str, tuple[float, int]]:
    merged = scores.merge(truth, on=["id", "role"], how="inner")
    result = {}
    for role, rows in merged.groupby("role", sort=False):
        if len(rows) > 1:
            result[str(role)] = (float(np.corrcoef(rows["mean"], rows["value"])[0, 1]), len(rows))
    return result


def _diagnostics(
    draws: PosteriorDraws, summary: PosteriorSummary, mcmc: McmcConfig, pooled: PooledEstimates | None
) -> str:
    builder = ReportBuilder("Fit diagnostics")
    builder.add_facts(
        "Sampler",
        [
            ("chains", mcmc.chains),
            ("iterations", mcmc.iterations),
            ("burn-in", mcmc.burn_in),
            ("thinning", mcmc.thinning),
            ("retained per chain", draws.n_retained),
            ("seed", mcmc.seed),
            ("R-hat threshold", mcmc.rhat_threshold),
            ("split R-hat", mcmc.split_rhat),
        ],
    )
    acceptance = pd.DataFrame(
        [{"chain": c, **rates} for c, rates in enumerate(draws.acceptance)],
    )
    builder.add_table("Post-burn-in acceptance rates", acceptance, digits=3)
    frame = summary.to_frame()
    builder.add_table("Flagged R-hat", frame.loc[frame["parameter"].isin(summary.flagged())])
    if {"sigma_alpha", "sigma_beta", "sigma_gamma"} <= {*draws.names, *draws.fixed}:
        builder.add_table("Variance partition", summarize_partition(draws).to_frame())
    if pooled is not None:
        builder.add_facts(
            "Sequential distal regression",
            [("imputations used", pooled.n_imputations), ("imputations dropped", pooled.n_dropped)],
        )
        builder.add_table("Pooled coefficients", pooled.to_frame())
    return builder.build()


def _print_identification(report: IdentificationReport) -> None:
    table = Table(title=f"Design: {report.n_individuals} individuals, {report.n_dyads} directed dyads")
    table.add_column("parameter")
    table.add_column("status")
    table.add_column("missing patterns")
    for name, status in report.status.items():
        missing = ", ".join(PATTERN_DESCRIPTIONS[p] for p in report.missing.get(name, ()))
        style = "green" if report.is_identified(name) else "red"
        table.add_row(name, f"[{style}]{status.value}[/{style}]", missing)
    console.print(table)
    patterns = ", ".join(f"{PATTERN_DESCRIPTIONS[p]}: {report.counts[p]}" for p in PATTERN_DESCRIPTIONS)
    console.print(f"Pattern counts: {patterns}", style="blue")
    missing_patterns = report.missing_patterns()
    if missing_patterns:
        console.print(
            f"Missing covariance patterns: {', '.join(PATTERN_DESCRIPTIONS[p] for p in missing_patterns)}", style="red"
        )
    undefined = [name for name, status in report.status.items() if status is ParameterStatus.UNDEFINED]
    if undefined:
        console.print(
            f"Undefined: {', '.join(undefined)} (no individual is both an actor and a partner)", style="red"
        )
    if report.all_identified:
        console.print("✅ All five decomposition parameters are identified", style="green")


def _print_summary(summary: PosteriorSummary) -> None:
    table = Table()
    for column in ("parameter", "mean", "sd", "q2.5", "q97.5", "rhat"):
        table.add_column(column, justify="left" if column == "parameter" else "right")
    for row in summary.rows:
        values = (row.mean, row.sd, row.lower, row.upper, row.rhat)
        table.add_row(row.parameter, *(format_value(v) for v in values))
    console.print(table)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
