"""
Mean structure of the latent traits.

The actor-trait mean is ``male_a * mu_male + x_alpha[a] @ c_alpha``, the
partner-trait mean ``x_beta[p] @ c_beta`` and the dyadic-trait mean
``x_gamma[a,p] @ c_gamma``. A cluster intercept ``u_j`` shifts every dyad
inside cluster ``j``. Coefficients are identified only when the columns they
add to the composite trait are linearly independent of each other and of the
constant (which the step difficulties absorb).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from .utils.errors import SpecificationError

if TYPE_CHECKING:
    import pandas as pd

    from .design import DyadDesign
    from .model_spec import ModelSpec

logger = logging.getLogger(__name__)

_NULL_LOADING = 1e-6


@dataclass(frozen=True, eq=False)
class MeanTerms:
    """Covariate matrices and labels feeding the latent means; empty means no term."""

    n_individuals: int
    n_dyads: int
    male: np.ndarray | None = None
    x_alpha: np.ndarray | None = None
    x_beta: np.ndarray | None = None
    x_gamma: np.ndarray | None = None
    names_alpha: tuple[str, ...] = ()
    names_beta: tuple[str, ...] = ()
    names_gamma: tuple[str, ...] = ()
    dyad_cluster: np.ndarray | None = None
    cluster_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.x_alpha is None:
            object.__setattr__(self, "x_alpha", np.zeros((self.n_individuals, 0)))
        if self.x_beta is None:
            object.__setattr__(self, "x_beta", np.zeros((self.n_individuals, 0)))
        if self.x_gamma is None:
            object.__setattr__(self, "x_gamma", np.zeros((self.n_dyads, 0)))

    @property
    def has_gender(self) -> bool:
        return self.male is not None

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_ids)

    @classmethod
    def empty(cls, design: DyadDesign) -> MeanTerms:
        return cls(design.n_individuals, design.n_dyads)


def apply_gender_mean(spec: ModelSpec, design: DyadDesign, terms: MeanTerms) -> MeanTerms:
    if not spec.gender_mean:
        return terms
    missing = [individual for individual, gender in zip(design.ids, design.genders) if gender is None]
    if missing:
        msg = f"gender_mean needs a gender for every individual; missing for {_preview(missing)}"
        raise SpecificationError(msg)
    male = np.array([gender == spec.male_label for gender in design.genders], dtype=float)
    return replace(terms, male=male)


def apply_covariates(
    spec: ModelSpec,
    design: DyadDesign,
    terms: MeanTerms,
    *,
    individual_covariates: pd.DataFrame | None = None,
    dyad_covariates: pd.DataFrame | None = None,
) -> MeanTerms:
    """Attach covariate columns; individual tables are indexed by id, dyad tables are in design dyad order."""
    if not spec.has_covariates:
        return terms
    x_alpha = _columns(individual_covariates, spec.covariates_alpha, "individual", design.n_individuals)
    x_beta = _columns(individual_covariates, spec.covariates_beta, "individual", design.n_individuals)
    x_gamma = _columns(dyad_covariates, spec.covariates_gamma, "dyad", design.n_dyads)
    return replace(
        terms,
        x_alpha=x_alpha,
        x_beta=x_beta,
        x_gamma=x_gamma,
        names_alpha=spec.covariates_alpha,
        names_beta=spec.covariates_beta,
        names_gamma=spec.covariates_gamma,
    )


def apply_cluster_intercept(spec: ModelSpec, design: DyadDesign, terms: MeanTerms) -> MeanTerms:
    """Assign every directed dyad to its cluster; dyads crossing clusters are rejected."""
    if not spec.cluster_intercept:
        return terms
    labels: list[str] = []
    for d, (a, p) in enumerate(zip(design.actors, design.partners)):
        label = design.dyad_clusters[d]
        if label is None:
            actor_cluster, partner_cluster = design.clusters[a], design.clusters[p]
            if actor_cluster is None or partner_cluster is None:
                msg = f"cluster_intercept needs cluster labels; dyad {design.ids[a]}>{design.ids[p]} has none"
                raise SpecificationError(msg)
            if actor_cluster != partner_cluster:
                msg = (
                    f"cluster_intercept covers within-cluster dyads only; "
                    f"{design.ids[a]}>{design.ids[p]} spans clusters {actor_cluster} and {partner_cluster}"
                )
                raise SpecificationError(msg)
            label = actor_cluster
        labels.append(label)
    cluster_ids = tuple(dict.fromkeys(labels))
    position = {label: j for j, label in enumerate(cluster_ids)}
    dyad_cluster = np.array([position[label] for label in labels], dtype=np.int64)
    return replace(terms, dyad_cluster=dyad_cluster, cluster_ids=cluster_ids)


def check_mean_identification(design: DyadDesign, terms: MeanTerms) -> None:
    """Reject mean terms whose composite-trait columns are collinear with each other or the constant."""
    columns = [np.ones(design.n_dyads)]
    names = ["constant"]
    if terms.male is not None:
        columns.append(terms.male[design.actors])
        names.append("mu_male")
    for k, name in enumerate(terms.names_alpha):
        columns.append(terms.x_alpha[design.actors, k])
        names.append(f"c_alpha[{name}]")
    for k, name in enumerate(terms.names_beta):
        columns.append(terms.x_beta[design.partners, k])
        names.append(f"c_beta[{name}]")
    for k, name in enumerate(terms.names_gamma):
        columns.append(terms.x_gamma[:, k])
        names.append(f"c_gamma[{name}]")
    if len(columns) == 1 or design.n_dyads == 0:
        return
    matrix = np.column_stack(columns)
    _, singular, vt = np.linalg.svd(matrix, full_matrices=True)
    tolerance = singular.max() * max(matrix.shape) * np.finfo(float).eps
    rank = int(np.sum(singular > tolerance))
    if rank == matrix.shape[1]:
        return
    null_space = vt[rank:]
    offending = [name for j, name in enumerate(names) if np.any(np.abs(null_space[:, j]) > _NULL_LOADING)]
    msg = f"Mean terms are not identified: columns {', '.join(offending)} are linearly dependent"
    raise SpecificationError(msg)


def build_mean_terms(
    spec: ModelSpec,
    design: DyadDesign,
    *,
    individual_covariates: pd.DataFrame | None = None,
    dyad_covariates: pd.DataFrame | None = None,
) -> MeanTerms:
    terms = MeanTerms.empty(design)
    terms = apply_gender_mean(spec, design, terms)
    terms = apply_covariates(
        spec, design, terms, individual_covariates=individual_covariates, dyad_covariates=dyad_covariates
    )
    terms = apply_cluster_intercept(spec, design, terms)
    check_mean_identification(design, terms)
    if terms.n_clusters:
        logger.debug("Cluster intercepts for %d clusters", terms.n_clusters)
    return terms


def _columns(table: pd.DataFrame | None, names: tuple[str, ...], kind: str, n_rows: int) -> np.ndarray:
    if not names:
        return np.zeros((n_rows, 0))
    if table is None:
        msg = f"Covariates {', '.join(names)} requested but no {kind} covariate table was given"
        raise SpecificationError(msg)
    missing = [name for name in names if name not in table.columns]
    if missing:
        msg = f"Missing {kind} covariate columns: {', '.join(missing)}"
        raise SpecificationError(msg)
    values = table.loc[:, list(names)].to_numpy(dtype=float)
    if values.shape[0] != n_rows:
        msg = f"{kind.capitalize()} covariate table has {values.shape[0]} rows, expected {n_rows}"
        raise SpecificationError(msg)
    if not np.all(np.isfinite(values)):
        bad = [name for k, name in enumerate(names) if not np.all(np.isfinite(values[:, k]))]
        msg = f"{kind.capitalize()} covariate columns with missing values: {', '.join(bad)}"
        raise SpecificationError(msg)
    return values


def _preview(values: list[str], limit: int = 5) -> str:
    shown = ", ".join(values[:limit])
    return shown if len(values) <= limit else f"{shown} (+{len(values) - limit} more)"
