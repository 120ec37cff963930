"""Run configuration shared by the command-line subcommands."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .density import DyadData
from .design import DyadDesign, make_k_group
from .inference import McmcConfig
from .model import N_DISTAL_TERMS, DistalCoefficients, Hyperparameters, ItemBank
from .model_spec import DistalMode, ModelSpec
from .recovery import RecoveryConfig
from .simulate import (
    DESK_DISTAL,
    DESK_HYPERPARAMETERS,
    DESK_ITEM_OFFSETS,
    DESK_MU_MALE,
    DESK_STEPS,
    SimulationPlan,
    desk_design,
)
from .utils.config import (
    load_config_toml,
    load_project_defaults,
    merge_config,
    parse_assignment,
    validate_config,
)
from .utils.csv_io import (
    DesignFiles,
    ResponseFile,
    read_category_map,
    read_design,
    read_distal,
    read_dyad_covariates,
    read_responses,
)
from .utils.errors import InvalidConfigError

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIRECTORY = "dyad_irt_out"
_PATH_FIELDS = {
    "design": ("file", "individuals"),
    "data": ("responses", "distal", "dyad_covariates", "category_map"),
}
_HYPER_FIELDS = {f.name for f in fields(Hyperparameters)}


@dataclass
class RunConfig:
    """
    Resolved configuration of one command-line run.

    Every attribute is one TOML section. File paths in ``[design]`` and
    ``[data]`` are resolved against the directory of the file that named them.

    Example:
        ```python
        config = RunConfig.from_toml(Path("study.toml"), mcmc={"chains": 2})
        draws = fit(config.model_spec(), config.load_data().data, config.mcmc_config())
        ```

    Attributes:
        design: Edge-list file or generated design (`kind`, `sizes`).
        data: Response, distal and covariate files plus ingestion policies.
        model: Model specification (`[model]`, `[model.fixed]`).
        prior: Prior scale options.
        mcmc: Sampler settings.
        simulation: Generating values for `simulate` and `recover`.
        recovery: Replication study settings.
        output: Output directory and what to write.
    """

    design: dict[str, Any] = field(default_factory=dict)
    data: dict[str, Any] = field(default_factory=dict)
    model: dict[str, Any] = field(default_factory=dict)
    prior: dict[str, Any] = field(default_factory=dict)
    mcmc: dict[str, Any] = field(default_factory=dict)
    simulation: dict[str, Any] = field(default_factory=dict)
    recovery: dict[str, Any] = field(default_factory=dict)
    output: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_toml(
        cls,
        path: Path | None = None,
        *,
        assignments: list[str] | None = None,
        **overrides: dict[str, Any],
    ) -> RunConfig:
        """
        Create a RunConfig from project defaults, a config file and command-line values.

        Args:
            path: Explicit `--config` file. Project defaults from `[tool.dyad-irt]`
                in pyproject.toml or a dyad_irt.toml are read first either way.
            assignments: `section.key=value` strings from `--set`.
            **overrides: Section tables from dedicated flags; these win over everything.
        """
        config = _resolve_paths(load_project_defaults(), Path.cwd())
        if path is not None:
            file_config = load_config_toml(path)
            validate_config(file_config)
            config = merge_config(config, _resolve_paths(file_config, path.resolve().parent))

        set_values: dict[str, dict[str, Any]] = {}
        for assignment in assignments or []:
            section, key, value = parse_assignment(assignment)
            set_values = merge_config(set_values, {section: {key: value}})
        config = merge_config(config, _resolve_paths(set_values, Path.cwd()))
        flags = {section: {k: v for k, v in values.items() if v is not None} for section, values in overrides.items()}
        config = merge_config(config, _resolve_paths(flags, Path.cwd()))

        validate_config(config)
        return cls(**config)

    @classmethod
    def from_sections(cls, sections: dict[str, dict[str, Any]], **overrides: dict[str, Any]) -> RunConfig:
        """Rebuild from an already resolved configuration, e.g. the one recorded in a manifest."""
        flags = {section: {k: v for k, v in values.items() if v is not None} for section, values in overrides.items()}
        config = merge_config(sections, flags)
        validate_config(config)
        return cls(**config)

    def sections(self) -> dict[str, dict[str, Any]]:
        """Non-empty sections; the output directory is left out so reruns elsewhere hash the same."""
        resolved = {f.name: dict(getattr(self, f.name)) for f in fields(self)}
        resolved["output"].pop("directory", None)
        return {name: values for name, values in resolved.items() if values}

    # -- builders -------------------------------------------------------------

    def output_dir(self) -> Path:
        return Path(self.output.get("directory", DEFAULT_OUTPUT_DIRECTORY))

    def model_spec(self) -> ModelSpec:
        return ModelSpec.from_sections(self.model, self.prior)

    def mcmc_config(self) -> McmcConfig:
        return McmcConfig.from_section(self.mcmc)

    def build_design(self) -> DesignFiles:
        """The design from `design.file`, or generated from `kind` and `sizes`, or the desk-scale default."""
        if "file" in self.design:
            return read_design(self.design["file"], self.design.get("individuals"))
        genders = tuple(self.design["block_genders"]) if "block_genders" in self.design else None
        if "sizes" in self.design:
            sizes = [tuple(s) if isinstance(s, list) else s for s in self.design["sizes"]]
            design = make_k_group(
                self.design.get("kind", "block"),
                sizes,
                genders=genders,  # type: ignore[arg-type]
                clusters_by_group=self.design.get("clusters_by_group", False),
            )
            return DesignFiles(design)
        if "kind" in self.design:
            msg = "[design] kind needs sizes"
            raise InvalidConfigError(msg)
        return DesignFiles(desk_design(genders=genders))  # type: ignore[arg-type]

    def load_data(self) -> LoadedData:
        """Read the design and every data file named in `[data]`."""
        if "file" not in self.design:
            msg = "Fitting needs observed data: set design.file"
            raise InvalidConfigError(msg)
        if "responses" not in self.data:
            msg = "Fitting needs observed data: set data.responses"
            raise InvalidConfigError(msg)
        design_files = self.build_design()
        design = design_files.design
        category_map = read_category_map(self.data["category_map"]) if "category_map" in self.data else None
        categories = self.data.get("categories")
        response_file = read_responses(
            self.data["responses"],
            design,
            categories=categories,
            category_map=category_map,
            drop_counterpart=self.data.get("drop_counterpart", False),
        )
        distal = read_distal(self.data["distal"], design) if "distal" in self.data else None
        dyad_covariates = (
            read_dyad_covariates(self.data["dyad_covariates"], design) if "dyad_covariates" in self.data else None
        )
        data = DyadData(
            design=design,
            responses=response_file.responses,
            categories=response_file.categories,
            item_ids=response_file.item_ids,
            distal=distal,
            individual_covariates=design_files.individual_covariates,
            dyad_covariates=dyad_covariates,
        )
        return LoadedData(data, response_file)

    def item_bank(self) -> ItemBank:
        """Explicit `simulation.deltas` rows, or desk-style steps spread over `n_items` and `categories`."""
        if "deltas" in self.simulation:
            return ItemBank.from_rows(self.simulation["deltas"])
        n_items = self.simulation.get("n_items", len(DESK_ITEM_OFFSETS))
        categories = self.simulation.get("categories", len(DESK_STEPS) + 1)
        steps = tuple(np.linspace(DESK_STEPS[0], DESK_STEPS[-1], categories - 1).tolist())
        offsets = (
            tuple(np.linspace(DESK_ITEM_OFFSETS[0], DESK_ITEM_OFFSETS[-1], n_items).tolist()) if n_items > 1 else (0.0,)
        )
        return ItemBank.shifted(steps, offsets)

    def simulation_plan(self, design: DyadDesign | None = None) -> SimulationPlan:
        design = design if design is not None else self.build_design().design
        spec = self.model_spec()
        truth = dict(self.simulation.get("truth", {}))
        unknown = sorted(set(truth) - _HYPER_FIELDS)
        if unknown:
            msg = f"Unknown [simulation.truth] keys: {', '.join(unknown)}"
            raise InvalidConfigError(msg)
        has_genders = any(label is not None for label in design.genders)
        hyper_values = {**DESK_HYPERPARAMETERS.as_dict(), "mu_male": DESK_MU_MALE if has_genders else 0.0, **truth}
        return SimulationPlan(
            design=design,
            item_bank=self.item_bank(),
            hyper=Hyperparameters(**hyper_values),
            distal=self._distal_truth(spec),
            covariates=self._covariate_truth(),
            cluster_sd=self.simulation.get("cluster_sd"),
            male_label=spec.male_label,
        )

    def _distal_truth(self, spec: ModelSpec) -> DistalCoefficients | None:
        table = self.simulation.get("distal")
        if table is None and spec.distal is DistalMode.NONE:
            return None
        if table is None:
            values = list(DESK_DISTAL if spec.distal_interactions else DESK_DISTAL[:7])
        else:
            names = [f"b{j}" for j in range(N_DISTAL_TERMS)]
            unknown = sorted(set(table) - set(names))
            if unknown:
                msg = f"Unknown [simulation.distal] keys: {', '.join(unknown)}"
                raise InvalidConfigError(msg)
            values = [float(table.get(name, 0.0)) for name in names]
        return DistalCoefficients(
            np.array(values), interactions=spec.distal_interactions, exchangeable=spec.exchangeable_distal
        )

    def _covariate_truth(self) -> dict[str, dict[str, float]]:
        table = self.simulation.get("covariates", {})
        unknown = sorted(set(table) - {"alpha", "beta", "gamma"})
        if unknown:
            msg = f"[simulation.covariates] takes alpha, beta and gamma tables, got {', '.join(unknown)}"
            raise InvalidConfigError(msg)
        return {role: {name: float(value) for name, value in coefficients.items()} for role, coefficients in table.items()}

    def simulation_seed(self) -> int:
        return int(self.simulation.get("seed", 0))

    def recovery_config(self) -> RecoveryConfig:
        mcmc = self.mcmc_config()
        return RecoveryConfig(
            plan=self.simulation_plan(),
            model_spec=self.model_spec(),
            mcmc=mcmc,
            replications=self.recovery.get("replications", 20),
            seed=self.simulation_seed(),
            self_test=self.recovery.get("self_test", False),
            self_test_size=self.recovery.get("self_test_size", 50),
            parameters=tuple(self.recovery.get("parameters", ())),
            threads=mcmc.threads,
        )


@dataclass(frozen=True, eq=False)
class LoadedData:
    data: DyadData
    response_file: ResponseFile


def _resolve_paths(config: dict[str, Any], base: Path) -> dict[str, Any]:
    resolved = {section: dict(values) if isinstance(values, dict) else values for section, values in config.items()}
    for section, keys in _PATH_FIELDS.items():
        values = resolved.get(section)
        if not isinstance(values, dict):
            continue
        for key in keys:
            if isinstance(values.get(key), str):
                values[key] = str((base / values[key]).resolve())
    return resolved
