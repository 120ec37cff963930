"""
Analysis pipelines on top of ``fit``.

- ``fit_joint``: one posterior over the measurement model and the distal
  regression.
- ``fit_sequential_mi``: fit the measurement model alone, then treat
  equally spaced posterior latent draws as imputations, fit the distal
  logistic regression by maximum likelihood on each and pool with Rubin's
  rules.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy import stats
from statsmodels.tools.sm_exceptions import ConvergenceWarning, PerfectSeparationWarning

from .density import DyadModel
from .inference import McmcConfig, PosteriorDraws, PosteriorSummary, fit, summarize
from .model import LatentState, distal_basis
from .model_spec import DistalMode
from .utils.errors import InvalidArgumentError, InvalidStateError

if TYPE_CHECKING:
    from .density import DyadData
    from .mean_terms import MeanTerms
    from .model_spec import ModelSpec

__all__ = [
    "JointFit",
    "PooledEstimates",
    "fit_joint",
    "fit_sequential_mi",
    "imputation_indices",
    "pool_imputations",
    "rubin_pool",
]

logger = logging.getLogger(__name__)

# slope columns whose spread over dyads is below this carry no information
NEGLIGIBLE_SPREAD = 1e-6
POOLED_COLUMNS = ("parameter", "estimate", "within", "between", "total", "df", "lower", "upper")


@dataclass(frozen=True, eq=False)
class JointFit:
    draws: PosteriorDraws
    summary: PosteriorSummary


def fit_joint(
    model_spec: ModelSpec,
    data: DyadData,
    config: McmcConfig,
    *,
    terms: MeanTerms | None = None,
) -> JointFit:
    """Sample measurement model and distal regression together."""
    if model_spec.distal is not DistalMode.JOINT:
        msg = f"fit_joint needs distal = joint, got {model_spec.distal.value}"
        raise InvalidArgumentError(msg)
    if data.distal is None or data.distal.dyad.size == 0:
        msg = "fit_joint needs distal outcomes"
        raise InvalidArgumentError(msg)
    draws = fit(model_spec, data, config, terms=terms)
    return JointFit(draws, summarize(draws))


@dataclass(frozen=True, eq=False)
class PooledEstimates:
    """
    Rubin-pooled distal coefficients.

    ``total = within + (1 + 1/M) * between``; intervals use a t reference
    with Barnard-Rubin degrees of freedom.
    """

    names: tuple[str, ...]
    estimate: np.ndarray
    within: np.ndarray
    between: np.ndarray
    total: np.ndarray
    df: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    n_imputations: int
    n_dropped: int = 0

    def __getitem__(self, name: str) -> dict[str, float]:
        k = self.names.index(name)
        return {column: float(getattr(self, column)[k]) for column in POOLED_COLUMNS[1:]}

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "parameter": self.names,
                "estimate": self.estimate,
                "within": self.within,
                "between": self.between,
                "total": self.total,
                "df": self.df,
                "lower": self.lower,
                "upper": self.upper,
            },
            columns=list(POOLED_COLUMNS),
        )


def rubin_pool(
    names: tuple[str, ...],
    estimates: np.ndarray,
    variances: np.ndarray,
    *,
    complete_df: float | None = None,
    level: float = 0.95,
    n_dropped: int = 0,
) -> PooledEstimates:
    """
    Pool ``(M, k)`` point estimates and squared standard errors.

    ``complete_df`` is the complete-data residual degrees of freedom; without
    it the large-sample Rubin degrees of freedom are used.
    """
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    variances = np.atleast_2d(np.asarray(variances, dtype=float))
    m = estimates.shape[0]
    if m < 2:  # noqa: PLR2004
        msg = f"Rubin pooling needs at least 2 imputations, got {m}"
        raise InvalidArgumentError(msg)
    if estimates.shape != variances.shape or estimates.shape[1] != len(names):
        msg = f"Estimates {estimates.shape} and variances {variances.shape} do not match {len(names)} names"
        raise InvalidArgumentError(msg)
    estimate = estimates.mean(axis=0)
    within = variances.mean(axis=0)
    between = estimates.var(axis=0, ddof=1)
    total = within + (1.0 + 1.0 / m) * between
    df = np.array([_barnard_rubin_df(b, t, m, complete_df) for b, t in zip(between, total)])
    half_width = stats.t.ppf(0.5 + level / 2.0, df) * np.sqrt(total)
    return PooledEstimates(
        names=tuple(names),
        estimate=estimate,
        within=within,
        between=between,
        total=total,
        df=df,
        lower=estimate - half_width,
        upper=estimate + half_width,
        n_imputations=m,
        n_dropped=n_dropped,
    )


def _barnard_rubin_df(between: float, total: float, m: int, complete_df: float | None) -> float:
    fraction = (1.0 + 1.0 / m) * between / total if total > 0 else 0.0
    large_sample = (m - 1) / fraction**2 if fraction > 0 else math.inf
    if complete_df is None:
        return large_sample
    observed = (complete_df + 1.0) / (complete_df + 3.0) * complete_df * (1.0 - fraction)
    if math.isinf(large_sample):
        return observed
    return large_sample * observed / (large_sample + observed)


def imputation_indices(n_chains: int, n_retained: int, m: int) -> list[tuple[int, int]]:
    """``m`` (chain, draw) positions equally spaced over the chain-major sequence of retained draws."""
    total = n_chains * n_retained
    if m > total:
        msg = f"{m} imputations requested but only {total} retained latent draws exist"
        raise InvalidArgumentError(msg)
    flat = np.floor((np.arange(m) + 0.5) * total / m).astype(np.int64)
    return [(int(k // n_retained), int(k % n_retained)) for k in flat]


def fit_sequential_mi(
    model_spec: ModelSpec,
    data: DyadData,
    config: McmcConfig,
    imputations: int | None = None,
    *,
    terms: MeanTerms | None = None,
) -> PooledEstimates:
    """Measurement fit first, then one maximum-likelihood distal regression per imputed latent draw."""
    m = model_spec.imputations if imputations is None else imputations
    if m < 2:  # noqa: PLR2004
        msg = f"Sequential estimation needs at least 2 imputations, got {m}"
        raise InvalidArgumentError(msg)
    if data.distal is None or data.distal.dyad.size == 0:
        msg = "fit_sequential_mi needs distal outcomes"
        raise InvalidArgumentError(msg)

    measurement = fit(model_spec.measurement_only(), data, replace(config, retain_latents=True), terms=terms)
    return pool_imputations(model_spec, data, measurement, m, terms=terms)


def pool_imputations(
    model_spec: ModelSpec,
    data: DyadData,
    measurement: PosteriorDraws,
    imputations: int,
    *,
    terms: MeanTerms | None = None,
) -> PooledEstimates:
    """Second stage of the sequential fit: distal regressions on retained latent draws, Rubin-pooled."""
    m = imputations
    if data.distal is None or data.distal.dyad.size == 0:
        msg = "Sequential estimation needs distal outcomes"
        raise InvalidArgumentError(msg)
    if measurement.latent_draws is None:
        msg = "Latent draws were not retained by the measurement fit"
        raise InvalidStateError(msg, hint="Set mcmc.retain_latents = true")

    distal_model = DyadModel(data, replace(model_spec, distal=DistalMode.JOINT), terms)
    basis, names = distal_basis(
        interactions=model_spec.distal_interactions, exchangeable=model_spec.exchangeable_distal
    )
    pinned = np.array([name in model_spec.fixed for name in names], dtype=bool)
    pinned_values = np.array([model_spec.fixed.get(name, 0.0) for name in names])
    free_names = tuple(name for name, is_pinned in zip(names, pinned) if not is_pinned)
    outcome = distal_model.distal_z

    estimates: list[np.ndarray] = []
    variances: list[np.ndarray] = []
    positions = imputation_indices(measurement.n_chains, measurement.n_retained, m)
    for k, (chain, draw) in enumerate(positions):
        latents = _latent_state(distal_model, measurement.latent_draws[chain, draw])
        features = distal_model.distal_design(latents) @ basis
        offset = features[:, pinned] @ pinned_values[pinned]
        free_features = features[:, ~pinned]
        informative = _informative_columns(free_features, free_names)
        if not informative.all():
            logger.debug(
                "Imputation %d: holding %s at 0 (negligible spread)",
                k,
                ", ".join(name for name, keep in zip(free_names, informative) if not keep),
            )
        result = _fit_logistic(outcome, free_features[:, informative], offset, k)
        if result is None:
            continue
        estimate = np.zeros(len(free_names))
        variance = np.zeros(len(free_names))
        estimate[informative], variance[informative] = result
        estimates.append(estimate)
        variances.append(variance)

    dropped = m - len(estimates)
    needed = max(math.ceil(m / 2), 2)
    if len(estimates) < needed:
        msg = f"Only {len(estimates)} of {m} imputation fits succeeded; at least {needed} are needed"
        raise InvalidArgumentError(msg)
    if dropped:
        logger.warning("Dropped %d of %d imputation fits (separation or non-convergence)", dropped, m)
    complete_df = float(outcome.size - len(free_names))
    return rubin_pool(
        free_names,
        np.array(estimates),
        np.array(variances),
        complete_df=complete_df if complete_df > 0 else None,
        n_dropped=dropped,
    )


def _latent_state(model: DyadModel, vector: np.ndarray) -> LatentState:
    n, u = model.n_individuals, model.n_pairs
    return LatentState(
        alpha=vector[:n],
        beta=vector[n : 2 * n],
        gamma=vector[2 * n : 2 * n + 2 * u].reshape(u, 2),
        u=vector[2 * n + 2 * u :],
    )


def _informative_columns(features: np.ndarray, names: tuple[str, ...]) -> np.ndarray:
    """Mask of columns to fit: the intercept and every slope whose feature varies over dyads."""
    spread = features.std(axis=0) if features.shape[0] else np.zeros(features.shape[1])
    return np.array([name == "b0" or s > NEGLIGIBLE_SPREAD for name, s in zip(names, spread)], dtype=bool)


def _fit_logistic(
    outcome: np.ndarray, features: np.ndarray, offset: np.ndarray, imputation: int
) -> tuple[np.ndarray, np.ndarray] | None:
    """IRLS logistic fit; ``None`` flags separation, non-convergence or unusable standard errors."""
    if features.shape[1] and np.linalg.matrix_rank(features) < features.shape[1]:
        logger.warning("Imputation %d: collinear distal features; dropped", imputation)
        return None
    model = sm.GLM(outcome, features, family=sm.families.Binomial(), offset=offset)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PerfectSeparationWarning)
        warnings.simplefilter("always", ConvergenceWarning)
        try:
            result = model.fit(maxiter=100)
        except (np.linalg.LinAlgError, ValueError) as err:
            logger.warning("Imputation %d: logistic fit failed (%s); dropped", imputation, err)
            return None
    if any(issubclass(w.category, PerfectSeparationWarning) for w in caught):
        logger.warning("Imputation %d: perfect separation; dropped", imputation)
        return None
    if not result.converged or any(issubclass(w.category, ConvergenceWarning) for w in caught):
        logger.warning("Imputation %d: logistic fit did not converge; dropped", imputation)
        return None
    params = np.asarray(result.params, dtype=float)
    variances = np.asarray(result.bse, dtype=float) ** 2
    if not (np.all(np.isfinite(params)) and np.all(np.isfinite(variances))):
        logger.warning("Imputation %d: non-finite estimates; dropped", imputation)
        return None
    return params, variances
