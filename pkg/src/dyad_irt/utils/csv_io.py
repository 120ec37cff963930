"""
Long-format CSV files.

Every table is read as strings (``dtype=str``) and converted column by column
so errors carry the 1-based file line of the offending row (the header is
line 1). Canonical column orders:

- design edges: ``actor_id, partner_id[, cluster]``
- individuals: ``id[, gender, cluster, block, group], covariates...``
- responses: ``actor_id, partner_id, item_id, response``
- distal outcomes: ``actor_id, partner_id, outcome``
- dyad covariates: ``actor_id, partner_id, covariates...``
- latent moments: ``chain, id, role, count, mean, m2``
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from ..design import DyadDesign
from ..inference import PosteriorDraws
from ..model import DistalSet, ResponseSet
from .errors import IngestionError

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    from ..model import LatentState

logger = logging.getLogger(__name__)

EDGE_COLUMNS = ("actor_id", "partner_id")
RESPONSE_COLUMNS = ("actor_id", "partner_id", "item_id", "response")
DISTAL_COLUMNS = ("actor_id", "partner_id", "outcome")
INDIVIDUAL_LABELS = ("gender", "cluster", "block", "group")
_HEADER_LINES = 1


def read_table(path: Path | str, required: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError as err:
        raise IngestionError("file not found", path=str(path)) from err
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as err:
        raise IngestionError(f"unreadable CSV ({err})", path=str(path)) from err
    frame.columns = [str(c).strip() for c in frame.columns]
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise IngestionError(f"missing columns: {', '.join(missing)}", path=str(path), line=_HEADER_LINES)
    return frame.apply(lambda column: column.str.strip())


def _line(row: int) -> int:
    return row + _HEADER_LINES + 1


def _integers(frame: pd.DataFrame, column: str, path: Path | str, rows: np.ndarray | None = None) -> np.ndarray:
    """Integer column; ``rows`` maps frame positions back to file rows when ``frame`` is a subset."""
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna() | (values != values.round())
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        line = _line(int(rows[row]) if rows is not None else row)
        raise IngestionError(f"{column} must be an integer, got {frame[column].iloc[row]!r}", path=str(path), line=line)
    return values.to_numpy(dtype=np.int64)


def _floats(frame: pd.DataFrame, column: str, path: Path | str) -> np.ndarray:
    values = pd.to_numeric(frame[column], errors="coerce")
    bad = values.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise IngestionError(
            f"{column} must be a number, got {frame[column].iloc[row]!r}", path=str(path), line=_line(row)
        )
    return values.to_numpy(dtype=float)


def _labels(frame: pd.DataFrame, column: str) -> tuple[str | None, ...]:
    if column not in frame.columns:
        return ()
    return tuple(value or None for value in frame[column])


# -- design ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DesignFiles:
    design: DyadDesign
    individual_covariates: pd.DataFrame | None = None


def read_design(edges_path: Path | str, individuals_path: Path | str | None = None) -> DesignFiles:
    """
    Build a design from an edge list and an optional individuals table.

    Without the individuals table, ids are taken from the edge list in
    first-seen order. Extra individual columns become covariates.
    """
    edges = read_table(edges_path, EDGE_COLUMNS)
    individuals = read_table(individuals_path, ("id",)) if individuals_path is not None else None
    if individuals is not None:
        duplicated = individuals["id"].duplicated()
        if duplicated.any():
            row = int(np.flatnonzero(duplicated.to_numpy())[0])
            raise IngestionError(
                f"duplicate id {individuals['id'].iloc[row]!r}", path=str(individuals_path), line=_line(row)
            )
        ids = list(individuals["id"])
    else:
        ids = list(dict.fromkeys([*edges["actor_id"], *edges["partner_id"]]))
    known = set(ids)
    pairs: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for row, (actor, partner) in enumerate(zip(edges["actor_id"], edges["partner_id"])):
        if not actor or not partner:
            raise IngestionError("empty actor_id or partner_id", path=str(edges_path), line=_line(row))
        if actor not in known or partner not in known:
            unknown = actor if actor not in known else partner
            raise IngestionError(f"unknown individual {unknown!r}", path=str(edges_path), line=_line(row))
        if actor == partner:
            raise IngestionError(f"self-dyad {actor}>{partner}", path=str(edges_path), line=_line(row))
        if (actor, partner) in seen:
            raise IngestionError(f"duplicate dyad {actor}>{partner}", path=str(edges_path), line=_line(row))
        seen.add((actor, partner))
        pairs.append((actor, partner))
    labels = {name: _labels(individuals, name) for name in INDIVIDUAL_LABELS} if individuals is not None else {}
    design = DyadDesign.from_edges(
        ids,
        pairs,
        groups=labels.get("group", ()),
        blocks=labels.get("block", ()),
        genders=labels.get("gender", ()),
        clusters=labels.get("cluster", ()),
        dyad_clusters=_labels(edges, "cluster"),
    )
    covariates = None
    if individuals is not None:
        extra = [c for c in individuals.columns if c != "id" and c not in INDIVIDUAL_LABELS]
        if extra:
            covariates = pd.DataFrame(
                {c: _floats(individuals, c, individuals_path or "") for c in extra},
                index=pd.Index(ids, name="id"),
            )
    return DesignFiles(design, covariates)


def write_design(design: DyadDesign, edges_path: Path, individuals_path: Path | None = None) -> None:
    edges = pd.DataFrame(
        {
            "actor_id": [design.ids[a] for a in design.actors],
            "partner_id": [design.ids[p] for p in design.partners],
        }
    )
    if any(label is not None for label in design.dyad_clusters):
        edges["cluster"] = [label or "" for label in design.dyad_clusters]
    edges.to_csv(edges_path, index=False)
    if individuals_path is not None:
        write_individuals(design, individuals_path)


def write_individuals(design: DyadDesign, path: Path, covariates: pd.DataFrame | None = None) -> None:
    table = pd.DataFrame({"id": design.ids})
    for name, labels in zip(INDIVIDUAL_LABELS, (design.genders, design.clusters, design.blocks, design.groups)):
        if any(label is not None for label in labels):
            table[name] = [label or "" for label in labels]
    if covariates is not None:
        for column in covariates.columns:
            table[column] = covariates[column].to_numpy()
    table.to_csv(path, index=False, float_format="%.17g")


# -- responses ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ResponseFile:
    responses: ResponseSet
    item_ids: tuple[str, ...]
    categories: np.ndarray
    dropped: int = 0
    category_map: dict[int, int] = field(default_factory=dict)


def read_category_map(path: Path | str) -> dict[int, int]:
    """Two-column ``from,to`` remap table applied to raw response values."""
    table = read_table(path, ("from", "to"))
    sources = _integers(table, "from", path)
    targets = _integers(table, "to", path)
    duplicated = pd.Series(sources).duplicated()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise IngestionError(f"category {sources[row]} mapped twice", path=str(path), line=_line(row))
    return dict(zip(sources.tolist(), targets.tolist()))


def read_responses(  # noqa: PLR0913
    path: Path | str,
    design: DyadDesign,
    *,
    categories: int | Mapping[str, int] | None = None,
    category_map: Mapping[int, int] | None = None,
    drop_counterpart: bool = False,
) -> ResponseFile:
    """
    Read item responses against ``design``.

    Empty response cells are invalid ratings and dropped (missing at random);
    with ``drop_counterpart`` the partner's rating of the actor on the same
    item is dropped too. Categories are declared per item (a mapping) or for
    all items (an int); undeclared items take ``max(response) + 1``, at least 2.
    """
    table = read_table(path, RESPONSE_COLUMNS)
    lookup = design.dyad_lookup
    dyads = np.empty(len(table), dtype=np.int64)
    for row, (actor, partner) in enumerate(zip(table["actor_id"], table["partner_id"])):
        d = lookup.get((actor, partner))
        if d is None:
            raise IngestionError(f"dyad {actor}>{partner} is not in the design", path=str(path), line=_line(row))
        dyads[row] = d
    invalid = (table["response"] == "").to_numpy()
    if invalid.any():
        logger.warning("%s: dropping %d empty rating(s)", path, int(invalid.sum()))
    keep = ~invalid
    if drop_counterpart and invalid.any():
        reverse = design.reverse
        dropped_keys = {
            (int(reverse[d]), item) for d, item in zip(dyads[invalid], table["item_id"][invalid]) if reverse[d] >= 0
        }
        counterpart = np.array(
            [(int(d), item) in dropped_keys for d, item in zip(dyads, table["item_id"])], dtype=bool
        )
        extra = counterpart & keep
        if extra.any():
            logger.warning("%s: dropping %d counterpart rating(s)", path, int(extra.sum()))
        keep &= ~counterpart
    rows = np.flatnonzero(keep)
    kept = table.iloc[rows]
    raw = _integers(kept, "response", path, rows) if len(kept) else np.zeros(0, np.int64)
    mapping = dict(category_map or {})
    if mapping:
        unmapped = [i for i, value in enumerate(raw) if int(value) not in mapping]
        if unmapped:
            row = int(rows[unmapped[0]])
            raise IngestionError(f"response {raw[unmapped[0]]} has no category mapping", path=str(path), line=_line(row))
        raw = np.array([mapping[int(value)] for value in raw], dtype=np.int64)

    item_ids = _item_order(kept["item_id"], categories)
    item_index = {item: i for i, item in enumerate(item_ids)}
    items = np.array([item_index[item] for item in kept["item_id"]], dtype=np.int64)
    declared = _declared_categories(item_ids, categories, raw, items)
    bad = (raw < 0) | (raw >= declared[items]) if raw.size else np.zeros(0, dtype=bool)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        msg = f"response {raw[i]} outside 0..{declared[items[i]] - 1} for item {item_ids[items[i]]!r}"
        raise IngestionError(msg, path=str(path), line=_line(int(rows[i])))
    responses = ResponseSet(dyads[rows], items, raw)
    return ResponseFile(responses, item_ids, declared, dropped=int(len(table) - rows.size), category_map=mapping)


def _item_order(item_column: pd.Series, categories: int | Mapping[str, int] | None) -> tuple[str, ...]:
    seen = list(dict.fromkeys(item_column))
    if categories is not None and not isinstance(categories, int):
        declared = [str(item) for item in categories]
        return tuple(declared + [item for item in seen if item not in declared])
    return tuple(seen)


def _declared_categories(
    item_ids: tuple[str, ...], categories: int | Mapping[str, int] | None, raw: np.ndarray, items: np.ndarray
) -> np.ndarray:
    observed_max = np.full(len(item_ids), -1, dtype=np.int64)
    if raw.size:
        np.maximum.at(observed_max, items, raw)
    result = np.maximum(observed_max + 1, 2)
    if isinstance(categories, int):
        result[:] = categories
    elif categories is not None:
        for i, item in enumerate(item_ids):
            if item in categories:
                result[i] = int(categories[item])
    return result


def write_responses(path: Path, design: DyadDesign, responses: ResponseSet, item_ids: Sequence[str]) -> None:
    pd.DataFrame(
        {
            "actor_id": [design.ids[a] for a in design.actors[responses.dyad]],
            "partner_id": [design.ids[p] for p in design.partners[responses.dyad]],
            "item_id": [item_ids[i] for i in responses.item],
            "response": responses.response,
        },
        columns=list(RESPONSE_COLUMNS),
    ).to_csv(path, index=False)


# -- distal outcomes and dyad covariates -------------------------------------


def read_distal(path: Path | str, design: DyadDesign) -> DistalSet:
    table = read_table(path, DISTAL_COLUMNS)
    dyads = _dyad_rows(table, design, path)
    outcome = _integers(table, "outcome", path)
    bad = (outcome != 0) & (outcome != 1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise IngestionError(f"outcome must be 0 or 1, got {outcome[row]}", path=str(path), line=_line(row))
    duplicated = pd.Series(dyads).duplicated()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise IngestionError("second outcome for the same dyad", path=str(path), line=_line(row))
    return DistalSet(dyads, outcome)


def write_distal(path: Path, design: DyadDesign, distal: DistalSet) -> None:
    pd.DataFrame(
        {
            "actor_id": [design.ids[a] for a in design.actors[distal.dyad]],
            "partner_id": [design.ids[p] for p in design.partners[distal.dyad]],
            "outcome": distal.outcome,
        },
        columns=list(DISTAL_COLUMNS),
    ).to_csv(path, index=False)


def read_dyad_covariates(path: Path | str, design: DyadDesign) -> pd.DataFrame:
    """Dyad covariates in design dyad order; dyads without a row get NaN."""
    table = read_table(path, EDGE_COLUMNS)
    dyads = _dyad_rows(table, design, path)
    columns = [c for c in table.columns if c not in EDGE_COLUMNS]
    result = pd.DataFrame(np.nan, index=pd.RangeIndex(design.n_dyads), columns=columns)
    for column in columns:
        result.loc[dyads, column] = _floats(table, column, path)
    result.insert(0, "partner_id", [design.ids[p] for p in design.partners])
    result.insert(0, "actor_id", [design.ids[a] for a in design.actors])
    return result


def write_dyad_covariates(path: Path, covariates: pd.DataFrame) -> None:
    covariates.to_csv(path, index=False, float_format="%.17g")


def _dyad_rows(table: pd.DataFrame, design: DyadDesign, path: Path | str) -> np.ndarray:
    lookup = design.dyad_lookup
    dyads = np.empty(len(table), dtype=np.int64)
    for row, (actor, partner) in enumerate(zip(table["actor_id"], table["partner_id"])):
        d = lookup.get((actor, partner))
        if d is None:
            raise IngestionError(f"dyad {actor}>{partner} is not in the design", path=str(path), line=_line(row))
        dyads[row] = d
    return dyads


# -- truth -------------------------------------------------------------------


def write_truth(path: Path, truth: Mapping[str, float]) -> None:
    pd.DataFrame({"parameter": list(truth), "value": list(truth.values())}).to_csv(
        path, index=False, float_format="%.17g"
    )


def latent_table(design: DyadDesign, latents: LatentState) -> pd.DataFrame:
    """True latent traits in score-table layout: id, role, value."""
    gamma = latents.gamma[design.pair_index, design.slot]
    return pd.DataFrame(
        {
            "id": [*design.ids, *design.ids, *design.dyad_labels()],
            "role": ["alpha"] * design.n_individuals + ["beta"] * design.n_individuals + ["gamma"] * design.n_dyads,
            "value": np.concatenate([latents.alpha, latents.beta, gamma]),
        }
    )


def read_latent_truth(path: Path | str) -> pd.DataFrame:
    table = read_table(path, ("id", "role", "value"))
    table["value"] = _floats(table, "value", path)
    return table


# -- latent moments ------------------------------------------------------------

MOMENT_COLUMNS = ("chain", "id", "role", "count", "mean", "m2")


def write_latent_moments(path: Path, draws: PosteriorDraws) -> None:
    """Per-chain running moments of every score row, enough to pool EAP scores later."""
    if not draws.has_latent_moments:
        return
    assert draws.latent_mean is not None  # noqa: S101
    assert draws.latent_m2 is not None  # noqa: S101
    assert draws.latent_count is not None  # noqa: S101
    columns = np.array([column for _, _, column in draws.score_rows], dtype=np.int64)
    rows = len(columns)
    pd.DataFrame(
        {
            "chain": np.repeat(np.arange(draws.n_chains), rows),
            "id": [identifier for _ in range(draws.n_chains) for identifier, _, _ in draws.score_rows],
            "role": [role for _ in range(draws.n_chains) for _, role, _ in draws.score_rows],
            "count": np.repeat(draws.latent_count, rows),
            "mean": draws.latent_mean[:, columns].reshape(-1),
            "m2": draws.latent_m2[:, columns].reshape(-1),
        },
        columns=list(MOMENT_COLUMNS),
    ).to_csv(path, index=False, float_format="%.17g")


def read_latent_moments(path: Path | str) -> PosteriorDraws:
    """Moments-only draws: no parameter draws, latent moments indexed by score row."""
    table = read_table(path, MOMENT_COLUMNS)
    chain = _integers(table, "chain", path)
    count = _integers(table, "count", path)
    mean = _floats(table, "mean", path)
    m2 = _floats(table, "m2", path)
    n_chains = int(chain.max()) + 1 if chain.size else 0
    if n_chains == 0 or len(table) % n_chains:
        raise IngestionError("every chain needs the same score rows", path=str(path))
    rows = len(table) // n_chains
    if not np.array_equal(chain, np.repeat(np.arange(n_chains), rows)):
        raise IngestionError("rows must be grouped by chain in chain order", path=str(path))
    first = table.iloc[:rows]
    return PosteriorDraws(
        names=(),
        draws=np.zeros((n_chains, 0, 0)),
        iterations=np.zeros(0, dtype=np.int64),
        latent_mean=mean.reshape(n_chains, rows),
        latent_m2=m2.reshape(n_chains, rows),
        latent_count=count.reshape(n_chains, rows)[:, 0],
        score_rows=tuple((identifier, role, k) for k, (identifier, role) in enumerate(zip(first["id"], first["role"]))),
    )
