"""
Posterior sampling, convergence diagnostics and summaries.

``fit`` runs independent chains of the adaptive Metropolis-within-Gibbs
sampler and collects their retained draws in a ``PosteriorDraws``.
``summarize`` reduces draws to EAP means, type-7 2.5%/97.5% quantiles and
R-hat; ``eap_latent_scores`` pools the per-chain latent moments into
posterior means and SDs of the individual and dyadic traits.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from functools import partial
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd

from .density import DyadData, DyadModel
from .design import DECOMPOSITION_PARAMETERS, check_identification
from .model import INDETERMINATE, Indeterminate, variance_partition
from .model_spec import ModelSpec
from .sampler import ChainResult, run_chain
from .utils.config import validate_section
from .utils.errors import IdentificationError, InvalidArgumentError, InvalidConfigError, InvalidStateError
from .utils.parameter_filter import ParameterFilter

if TYPE_CHECKING:
    from .mean_terms import MeanTerms

logger = logging.getLogger(__name__)

DRAW_COLUMNS = ("chain", "iteration", "parameter", "value")
SUMMARY_COLUMNS = ("parameter", "mean", "sd", "q2.5", "q97.5", "rhat")
SCORE_COLUMNS = ("id", "role", "mean", "sd")

Rhat = float | Indeterminate


@dataclass(frozen=True)
class McmcConfig:
    """
    Sampler settings.

    Example:
        ```python
        config = McmcConfig(chains=4, iterations=2000, burn_in=1000, seed=7)
        ```

    Attributes:
        chains: Independent chains, at least 2 for R-hat.
            Default: `4`.
        iterations: Iterations per chain, burn-in included.
            Default: `2000`.
        burn_in: Leading iterations discarded; proposal scales adapt only here.
            Default: `1000`.
        thinning: Keep every `thinning`-th post-burn-in iteration.
            Default: `1`.
        seed: Master seed; chain `c` draws from stream `(seed, chain, c)`.
            Default: `0`.
        rhat_threshold: R-hat above which a parameter is flagged.
            Default: `1.05`.
        target_accept_low: Lower edge of the acceptance window.
            Default: `0.25`.
        target_accept_high: Upper edge of the acceptance window.
            Default: `0.45`.
        adaptation_window: Iterations between scale adjustments.
            Default: `50`.
        retain_latents: Keep every retained latent draw, not just running moments.
            Default: `False`.
        split_rhat: Use split-chain R-hat.
            Default: `False`.
        init_jitter: Scale of the overdispersed starting noise.
            Default: `1.0`.
        threads: Worker processes; 1 runs chains in process.
            Default: `1`.
        force: Fit even when the design does not identify a freed parameter.
            Default: `False`.
    """

    chains: int = 4
    iterations: int = 2000
    burn_in: int = 1000
    thinning: int = 1
    seed: int = 0
    rhat_threshold: float = 1.05
    target_accept_low: float = 0.25
    target_accept_high: float = 0.45
    adaptation_window: int = 50
    retain_latents: bool = False
    split_rhat: bool = False
    init_jitter: float = 1.0
    threads: int = 1
    force: bool = False

    def __post_init__(self) -> None:
        problems = []
        if self.chains < 2:  # noqa: PLR2004
            problems.append(f"chains must be >= 2 for R-hat, got {self.chains}")
        if not 0 <= self.burn_in < self.iterations:
            problems.append(f"burn_in must satisfy 0 <= burn_in < iterations, got {self.burn_in} / {self.iterations}")
        if self.thinning < 1:
            problems.append(f"thinning must be >= 1, got {self.thinning}")
        if not 0 < self.target_accept_low < self.target_accept_high < 1:
            problems.append("target acceptance window must satisfy 0 < low < high < 1")
        if self.adaptation_window < 1:
            problems.append(f"adaptation_window must be >= 1, got {self.adaptation_window}")
        if self.threads < 1:
            problems.append(f"threads must be >= 1, got {self.threads}")
        if self.init_jitter < 0:
            problems.append(f"init_jitter must be >= 0, got {self.init_jitter}")
        if problems:
            raise InvalidConfigError("; ".join(problems))

    @property
    def retained_per_chain(self) -> int:
        return (self.iterations - self.burn_in) // self.thinning

    @property
    def total_retained(self) -> int:
        return self.chains * self.retained_per_chain

    def is_retained(self, iteration: int) -> bool:
        return iteration >= self.burn_in and (iteration - self.burn_in + 1) % self.thinning == 0

    def retained_iterations(self) -> np.ndarray:
        return self.burn_in + self.thinning * np.arange(1, self.retained_per_chain + 1) - 1

    @classmethod
    def from_section(cls, section: dict[str, Any] | None = None, **overrides: Any) -> McmcConfig:  # noqa: ANN401
        values = {**(section or {}), **{k: v for k, v in overrides.items() if v is not None}}
        validate_section("mcmc", values)
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})

    def as_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(eq=False)
class PosteriorDraws:
    """
    Retained draws of every free scalar parameter, plus latent moments.

    ``draws`` has shape ``(chains, retained, parameters)``. Latent moments are
    per chain over the latent vector laid out as ``alpha`` (one per
    individual), ``beta``, ``gamma`` (two slots per undirected pair) and
    cluster intercepts; ``score_rows`` maps the rows of the latent-score table
    (2n individual rows, then one per observed directed dyad) into that vector.
    """

    names: tuple[str, ...]
    draws: np.ndarray
    iterations: np.ndarray
    fixed: dict[str, float] = field(default_factory=dict)
    log_density: np.ndarray | None = None
    acceptance: list[dict[str, float]] = field(default_factory=list)
    latent_names: tuple[str, ...] = ()
    latent_mean: np.ndarray | None = None
    latent_m2: np.ndarray | None = None
    latent_count: np.ndarray | None = None
    latent_draws: np.ndarray | None = None
    score_rows: tuple[tuple[str, str, int], ...] = ()
    rhat_threshold: float = 1.05
    split_rhat: bool = False

    def __post_init__(self) -> None:
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.names):  # noqa: PLR2004
            msg = f"draws must have shape (chains, retained, {len(self.names)}), got {self.draws.shape}"
            raise InvalidArgumentError(msg)

    @property
    def n_chains(self) -> int:
        return int(self.draws.shape[0])

    @property
    def n_retained(self) -> int:
        return int(self.draws.shape[1])

    @property
    def has_latent_moments(self) -> bool:
        return self.latent_mean is not None and self.latent_m2 is not None and self.latent_count is not None

    def parameter(self, name: str) -> np.ndarray:
        """``(chains, retained)`` draws of one parameter; pinned parameters repeat their value."""
        if name in self.names:
            return self.draws[:, :, self.names.index(name)]
        if name in self.fixed:
            return np.full(self.draws.shape[:2], self.fixed[name])
        msg = f"Unknown parameter {name!r}"
        raise InvalidArgumentError(msg)

    def to_frame(self) -> pd.DataFrame:
        """Long table of draws with columns chain, iteration, parameter, value."""
        chains, retained, n_params = self.draws.shape
        return pd.DataFrame(
            {
                "chain": np.repeat(np.arange(chains), retained * n_params),
                "iteration": np.tile(np.repeat(self.iterations, n_params), chains),
                "parameter": np.tile(np.array(self.names, dtype=object), chains * retained),
                "value": self.draws.reshape(-1),
            },
            columns=list(DRAW_COLUMNS),
        )

    @classmethod
    def from_frame(
        cls,
        frame: pd.DataFrame,
        *,
        rhat_threshold: float = 1.05,
        split_rhat: bool = False,
    ) -> PosteriorDraws:
        """Rebuild parameter draws from a long draws table; latent artifacts are not restored."""
        missing = [column for column in DRAW_COLUMNS if column not in frame.columns]
        if missing:
            msg = f"Draws table lacks columns: {', '.join(missing)}"
            raise InvalidArgumentError(msg)
        names = tuple(dict.fromkeys(frame["parameter"].astype(str)))
        wide = frame.pivot_table(index=["chain", "iteration"], columns="parameter", values="value", aggfunc="first")
        wide = wide.sort_index().loc[:, list(names)]
        chains = wide.index.get_level_values("chain").unique()
        per_chain = wide.groupby(level="chain").size()
        if per_chain.nunique() != 1 or wide.isna().any().any():
            msg = "Draws table is ragged: every chain needs the same iterations for every parameter"
            raise InvalidArgumentError(msg)
        draws = wide.to_numpy(dtype=float).reshape(len(chains), int(per_chain.iloc[0]), len(names))
        iterations = wide.loc[chains[0]].index.to_numpy(dtype=np.int64)
        return cls(
            names=names,
            draws=draws,
            iterations=iterations,
            rhat_threshold=rhat_threshold,
            split_rhat=split_rhat,
        )

    def variance_partition_draws(self) -> pd.DataFrame:
        """Actor, partner and dyad shares of the composite-trait variance at every draw."""
        sa = self.parameter("sigma_alpha").ravel()
        sb = self.parameter("sigma_beta").ravel()
        sg = self.parameter("sigma_gamma").ravel()
        total = sa**2 + sb**2 + sg**2
        return pd.DataFrame(
            {
                "share_actor": sa**2 / total,
                "share_partner": sb**2 / total,
                "share_dyad": sg**2 / total,
            }
        )


def potential_scale_reduction(chains: np.ndarray, *, split: bool = False) -> Rhat:
    """
    Gelman-Rubin R-hat of a ``(chains, draws)`` array.

    Zero within-chain variance gives ``inf`` when the chain means differ and
    ``INDETERMINATE`` otherwise; exact duplicate chains are also indeterminate.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2:  # noqa: PLR2004
        msg = f"Expected a (chains, draws) array, got shape {chains.shape}"
        raise InvalidArgumentError(msg)
    if split:
        half = chains.shape[1] // 2
        chains = np.concatenate([chains[:, :half], chains[:, chains.shape[1] - half :]], axis=0)
    m, n = chains.shape
    if m < 2 or n < 2:  # noqa: PLR2004
        msg = f"R-hat needs >= 2 chains of >= 2 draws, got {m} x {n}"
        raise InvalidArgumentError(msg)
    if all(np.array_equal(chains[0], chains[c]) for c in range(1, m)):
        return INDETERMINATE
    means = chains.mean(axis=1)
    grand = math.fsum(means) / m
    between = n * math.fsum((means - grand) ** 2) / (m - 1)
    within = math.fsum(chains.var(axis=1, ddof=1)) / m
    if within == 0:
        return math.inf if between > 0 else INDETERMINATE
    pooled = (n - 1) / n * within + between / n
    return math.sqrt(pooled / within)


def rhat(draws: PosteriorDraws, parameter: str, *, split: bool | None = None) -> Rhat:
    split = draws.split_rhat if split is None else split
    return potential_scale_reduction(draws.parameter(parameter), split=split)


@dataclass(frozen=True)
class SummaryRow:
    parameter: str
    mean: float
    sd: float
    lower: float
    upper: float
    rhat: Rhat


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-parameter EAP mean, posterior SD, 2.5%/97.5% quantiles and R-hat."""

    rows: tuple[SummaryRow, ...]
    rhat_threshold: float = 1.05

    def __getitem__(self, parameter: str) -> SummaryRow:
        for row in self.rows:
            if row.parameter == parameter:
                return row
        raise KeyError(parameter)

    def __contains__(self, parameter: object) -> bool:
        return any(row.parameter == parameter for row in self.rows)

    @property
    def parameters(self) -> tuple[str, ...]:
        return tuple(row.parameter for row in self.rows)

    def flagged(self) -> list[str]:
        """Parameters whose R-hat exceeds the threshold or cannot be computed."""
        return [
            row.parameter
            for row in self.rows
            if isinstance(row.rhat, Indeterminate) or not row.rhat <= self.rhat_threshold
        ]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                (row.parameter, row.mean, row.sd, row.lower, row.upper, _format_rhat(row.rhat))
                for row in self.rows
            ],
            columns=list(SUMMARY_COLUMNS),
        )


def _format_rhat(value: Rhat) -> float | str:
    return str(value) if isinstance(value, Indeterminate) else value


def summarize_values(name: str, chains: np.ndarray, *, split: bool = False) -> SummaryRow:
    values = chains.ravel()
    if values.size == 0:
        msg = f"No retained draws for {name}"
        raise InvalidArgumentError(msg)
    mean = math.fsum(values) / values.size
    sd = math.sqrt(math.fsum((values - mean) ** 2) / (values.size - 1)) if values.size > 1 else 0.0
    lower, upper = np.quantile(values, [0.025, 0.975], method="linear")
    diagnostic: Rhat = (
        potential_scale_reduction(chains, split=split)
        if chains.ndim == 2 and chains.shape[0] >= 2 and chains.shape[1] >= 2  # noqa: PLR2004
        else INDETERMINATE
    )
    return SummaryRow(name, mean, sd, float(lower), float(upper), diagnostic)


def summarize(draws: PosteriorDraws, patterns: list[str] | None = None) -> PosteriorSummary:
    """Summarize every free parameter, optionally restricted to names matching glob ``patterns``."""
    names = ParameterFilter.include(draws.names, patterns)
    rows = tuple(summarize_values(name, draws.parameter(name), split=draws.split_rhat) for name in names)
    return PosteriorSummary(rows, draws.rhat_threshold)


def summarize_partition(draws: PosteriorDraws) -> PosteriorSummary:
    """EAP summary of the actor/partner/dyad variance shares."""
    shares = draws.variance_partition_draws()
    shape = (draws.n_chains, draws.n_retained)
    rows = tuple(
        summarize_values(column, shares[column].to_numpy().reshape(shape), split=draws.split_rhat)
        for column in shares.columns
    )
    return PosteriorSummary(rows, draws.rhat_threshold)


@dataclass(frozen=True)
class LatentScores:
    """EAP scores with posterior SDs: alpha and beta per individual, gamma per observed directed dyad."""

    ids: tuple[str, ...]
    roles: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"id": self.ids, "role": self.roles, "mean": self.mean, "sd": self.sd}, columns=list(SCORE_COLUMNS)
        )

    def role(self, role: str) -> pd.DataFrame:
        frame = self.to_frame()
        return frame.loc[frame["role"] == role].set_index("id")


def eap_latent_scores(draws: PosteriorDraws) -> LatentScores:
    """Pool per-chain latent moments into posterior means and SDs."""
    if not draws.has_latent_moments or not draws.score_rows:
        msg = "These draws carry no latent moments"
        raise InvalidStateError(msg, hint="Score from the fit run itself (the fit directory), not from a draws table")
    assert draws.latent_mean is not None  # noqa: S101
    assert draws.latent_m2 is not None  # noqa: S101
    assert draws.latent_count is not None  # noqa: S101
    counts = draws.latent_count.astype(float)
    total = counts.sum()
    mean = (counts[:, None] * draws.latent_mean).sum(axis=0) / total
    m2 = (draws.latent_m2 + counts[:, None] * (draws.latent_mean - mean) ** 2).sum(axis=0)
    sd = np.sqrt(m2 / (total - 1)) if total > 1 else np.zeros_like(mean)
    columns = np.array([column for _, _, column in draws.score_rows], dtype=np.int64)
    return LatentScores(
        ids=tuple(identifier for identifier, _, _ in draws.score_rows),
        roles=tuple(role for _, role, _ in draws.score_rows),
        mean=mean[columns],
        sd=sd[columns],
    )


def score_rows(model: DyadModel) -> tuple[tuple[str, str, int], ...]:
    """(id, role, latent column) of every score row in output order."""
    design = model.data.design
    n = design.n_individuals
    rows = [(identifier, "alpha", i) for i, identifier in enumerate(design.ids)]
    rows += [(identifier, "beta", n + i) for i, identifier in enumerate(design.ids)]
    gamma_columns = 2 * n + 2 * design.pair_index + design.slot
    rows += [(label, "gamma", int(column)) for label, column in zip(design.dyad_labels(), gamma_columns)]
    return tuple(rows)


def check_fit_identification(model: DyadModel, *, force: bool = False) -> None:
    """Refuse freed decomposition parameters the design cannot identify, or warn when forced."""
    report = check_identification(model.data.design)
    layout = model.layout
    offending = [
        name for name in DECOMPOSITION_PARAMETERS if layout.free[layout.index(name)] and not report.is_identified(name)
    ]
    if not offending:
        return
    details = ", ".join(f"{name} ({report.status[name].value})" for name in offending)
    if force:
        logger.warning("Fitting anyway; the design does not identify %s", details)
        return
    msg = f"The design does not identify {details}; pin these parameters or pass --force"
    raise IdentificationError(msg)


def run_chains(model: DyadModel, config: McmcConfig) -> list[ChainResult]:
    """Run every chain, in worker processes when ``config.threads > 1``; results are ordered by chain."""
    worker = partial(run_chain, model, config)
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=min(config.threads, config.chains)) as executor:
            return list(executor.map(worker, range(config.chains)))
    return [worker(chain) for chain in range(config.chains)]


def fit(
    model_spec: ModelSpec,
    data: DyadData,
    mcmc_config: McmcConfig,
    *,
    terms: MeanTerms | None = None,
) -> PosteriorDraws:
    """Sample the joint posterior of ``model_spec`` on ``data``."""
    model = DyadModel(data, model_spec, terms)
    check_fit_identification(model, force=mcmc_config.force)
    logger.info(
        "Sampling %d chains x %d iterations (%d burn-in, thinning %d), %d free parameters",
        mcmc_config.chains,
        mcmc_config.iterations,
        mcmc_config.burn_in,
        mcmc_config.thinning,
        int(model.layout.free.sum()),
    )
    results = run_chains(model, mcmc_config)
    layout = model.layout
    latent_names = tuple(model.unknown_names()[int(layout.free.sum()) :])
    draws = PosteriorDraws(
        names=layout.free_names,
        draws=np.stack([result.draws for result in results]),
        iterations=mcmc_config.retained_iterations(),
        fixed={name: float(v) for name, v, free in zip(layout.names, layout.defaults, layout.free) if not free},
        log_density=np.stack([result.log_density for result in results]),
        acceptance=[result.acceptance for result in results],
        latent_names=latent_names,
        latent_mean=np.stack([result.latent_mean for result in results]),
        latent_m2=np.stack([result.latent_m2 for result in results]),
        latent_count=np.array([result.latent_count for result in results], dtype=np.int64),
        latent_draws=(
            np.stack([result.latent_draws for result in results if result.latent_draws is not None])
            if mcmc_config.retain_latents
            else None
        ),
        score_rows=score_rows(model),
        rhat_threshold=mcmc_config.rhat_threshold,
        split_rhat=mcmc_config.split_rhat,
    )
    _log_diagnostics(draws)
    return draws


def _log_diagnostics(draws: PosteriorDraws) -> None:
    if draws.n_retained < 2:  # noqa: PLR2004
        logger.warning("Only %d retained draws per chain; R-hat not computed", draws.n_retained)
        return
    flagged = summarize(draws).flagged()
    if flagged:
        logger.warning(
            "R-hat above %.3g or indeterminate for %d parameter(s): %s",
            draws.rhat_threshold,
            len(flagged),
            ", ".join(flagged[:10]) + (" ..." if len(flagged) > 10 else ""),  # noqa: PLR2004
        )
    if draws.log_density is not None and not np.all(np.isfinite(draws.log_density)):
        logger.warning("Non-finite log density at some retained draws")


def partition_at(values: dict[str, float]) -> dict[str, float]:
    """Variance shares at a point, e.g. posterior means."""
    partition = variance_partition(values["sigma_alpha"], values["sigma_beta"], values["sigma_gamma"])
    return {"share_actor": partition.actor, "share_partner": partition.partner, "share_dyad": partition.dyad}
