import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

from .errors import InvalidConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib  # type: ignore[import-not-found]

CONFIG_FILENAME = "dyad_irt.toml"
PYPROJECT_SECTION = "dyad-irt"


def _is_int(x: Any, minimum: int | None = None) -> bool:  # noqa: ANN401
    return isinstance(x, int) and not isinstance(x, bool) and (minimum is None or x >= minimum)


def _is_number(x: Any) -> bool:  # noqa: ANN401
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_str_list(x: Any) -> bool:  # noqa: ANN401
    return isinstance(x, list) and all(isinstance(v, str) for v in x)


def _is_number_table(x: Any) -> bool:  # noqa: ANN401
    return isinstance(x, dict) and all(isinstance(k, str) and _is_number(v) for k, v in x.items())


def _is_group_sizes(x: Any) -> bool:  # noqa: ANN401
    if not isinstance(x, list) or not x:
        return False
    return all(
        _is_int(v, 1) or (isinstance(v, list) and len(v) == 2 and all(_is_int(s, 1) for s in v))  # noqa: PLR2004
        for v in x
    )


def _is_step_table(x: Any) -> bool:  # noqa: ANN401
    return isinstance(x, list) and all(isinstance(row, list) and all(_is_number(v) for v in row) for row in x)


Validator = Callable[[Any], bool]

SECTION_VALIDATORS: dict[str, dict[str, Validator]] = {
    "design": {
        "file": lambda x: isinstance(x, str),
        "individuals": lambda x: isinstance(x, str),
        "kind": lambda x: x in {"round_robin", "block"},
        "sizes": _is_group_sizes,
        "block_genders": lambda x: _is_str_list(x) and len(x) == 2,  # noqa: PLR2004
        "clusters_by_group": lambda x: isinstance(x, bool),
    },
    "data": {
        "responses": lambda x: isinstance(x, str),
        "distal": lambda x: isinstance(x, str),
        "dyad_covariates": lambda x: isinstance(x, str),
        "categories": lambda x: _is_int(x, 2) or (isinstance(x, dict) and all(_is_int(v, 2) for v in x.values())),
        "category_map": lambda x: isinstance(x, str),
        "drop_counterpart": lambda x: isinstance(x, bool),
    },
    "model": {
        "distal": lambda x: x in {"none", "joint", "sequential"},
        "distal_interactions": lambda x: isinstance(x, bool),
        "exchangeable_distal": lambda x: isinstance(x, bool),
        "gender_mean": lambda x: isinstance(x, bool),
        "male_label": lambda x: isinstance(x, str),
        "cluster_intercept": lambda x: isinstance(x, bool),
        "covariates_alpha": _is_str_list,
        "covariates_beta": _is_str_list,
        "covariates_gamma": _is_str_list,
        "fixed": _is_number_table,
        "imputations": lambda x: _is_int(x, 2),
    },
    "prior": {
        "variance_scale": lambda x: x in {"variance", "sd"},
        "sd_upper": lambda x: _is_number(x) and x > 0,
    },
    "mcmc": {
        "chains": lambda x: _is_int(x, 2),
        "iterations": lambda x: _is_int(x, 2),
        "burn_in": lambda x: _is_int(x, 0),
        "thinning": lambda x: _is_int(x, 1),
        "seed": lambda x: _is_int(x, 0),
        "rhat_threshold": lambda x: _is_number(x) and x >= 1,
        "target_accept_low": lambda x: _is_number(x) and 0 < x < 1,
        "target_accept_high": lambda x: _is_number(x) and 0 < x < 1,
        "adaptation_window": lambda x: _is_int(x, 1),
        "retain_latents": lambda x: isinstance(x, bool),
        "split_rhat": lambda x: isinstance(x, bool),
        "force": lambda x: isinstance(x, bool),
        "threads": lambda x: _is_int(x, 1),
        "init_jitter": lambda x: _is_number(x) and x >= 0,
    },
    "simulation": {
        "seed": lambda x: _is_int(x, 0),
        "n_items": lambda x: _is_int(x, 1),
        "categories": lambda x: _is_int(x, 2),
        "deltas": _is_step_table,
        "truth": _is_number_table,
        "distal": lambda x: isinstance(x, dict),
        "covariates": lambda x: isinstance(x, dict),
        "cluster_sd": lambda x: _is_number(x) and x >= 0,
    },
    "recovery": {
        "replications": lambda x: _is_int(x, 2),
        "self_test": lambda x: isinstance(x, bool),
        "self_test_size": lambda x: _is_int(x, 2),
        "parameters": _is_str_list,
    },
    "output": {
        "directory": lambda x: isinstance(x, str),
        "write_draws": lambda x: isinstance(x, bool),
        "strict": lambda x: isinstance(x, bool),
    },
}


def load_project_defaults() -> dict[str, dict[str, Any]]:
    """Load ``[tool.dyad-irt]`` from pyproject.toml or a dyad_irt.toml found upward from cwd."""
    toml_path = find_toml_file_path()
    if not toml_path.exists():
        return {}

    try:
        toml_config = load_config_toml(toml_path)
    except InvalidConfigError:
        return {}
    if toml_path.name == "pyproject.toml":
        toml_config = toml_config.get("tool", {}).get(PYPROJECT_SECTION, {})
    validate_config(toml_config)
    return toml_config


def find_toml_file_path() -> Path:
    config_path = Path.cwd()
    while config_path != config_path.parent:
        # dyad_irt.toml wins over pyproject.toml in the same directory
        for filename in [CONFIG_FILENAME, "pyproject.toml"]:
            candidate = config_path / filename
            if candidate.exists():
                return candidate
        config_path = config_path.parent
    return Path(CONFIG_FILENAME)


def load_config_toml(config_path: Path) -> dict[str, Any]:
    try:
        with config_path.open("rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as err:
        msg = f"Could not parse '{config_path}': {err}"
        raise InvalidConfigError(msg) from err
    except OSError as err:
        msg = f"Could not read '{config_path}': {err}"
        raise InvalidConfigError(msg) from err


def validate_config(config: dict[str, Any]) -> None:
    for section, values in config.items():
        if section not in SECTION_VALIDATORS:
            msg = f"Unknown config section '[{section}]'"
            raise InvalidConfigError(msg)
        if not isinstance(values, dict):
            msg = f"Config section '[{section}]' must be a table"
            raise InvalidConfigError(msg)
        validate_section(section, values)


def validate_section(section: str, config: dict[str, Any]) -> None:
    """Validate one section's values and raise error if invalid."""
    validators = SECTION_VALIDATORS[section]
    for field, value in config.items():
        if field not in validators:
            msg = f"Unknown config field '{field}' in [{section}]"
            raise InvalidConfigError(msg)

        if not validators[field](value):
            msg = f"Invalid config for '{section}.{field}': {value!r}"
            raise InvalidConfigError(msg)


def merge_config(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    """Merge section tables; values in ``override`` win, nested tables merge key by key."""
    merged: dict[str, Any] = {section: dict(values) for section, values in base.items()}
    for section, values in override.items():
        target = merged.setdefault(section, {})
        for key, value in values.items():
            if isinstance(value, dict) and isinstance(target.get(key), dict):
                target[key] = {**target[key], **value}
            else:
                target[key] = value
    return merged


def parse_assignment(assignment: str) -> tuple[str, str, Any]:
    """Parse a ``section.key=value`` override, reading the value as a TOML literal."""
    name, sep, raw = assignment.partition("=")
    section, dot, key = name.strip().partition(".")
    if not sep or not dot or not key:
        msg = f"Override must look like 'section.key=value', got {assignment!r}"
        raise InvalidConfigError(msg)
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    if "." in key:
        key, _, subkey = key.partition(".")
        value = {subkey: value}
    return section, key, value
