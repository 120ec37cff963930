"""Generative model: latent traits, item responses and distal outcomes."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit

from .density import DyadData
from .design import DyadDesign, make_k_group
from .model import (
    CovariateSpec,
    DistalCoefficients,
    DistalSet,
    Hyperparameters,
    ItemBank,
    LatentState,
    ResponseSet,
    distal_features,
    pcm_log_probs,
)
from .utils.errors import InvalidArgumentError
from .utils.rng import covariate_generator, simulation_generator

logger = logging.getLogger(__name__)

# "without gender, with interactions" estimates of the speed-dating application
DESK_HYPERPARAMETERS = Hyperparameters(
    sigma_alpha=1.03, sigma_beta=0.63, sigma_gamma=0.98, rho_alpha_beta=-0.06, rho_gamma=0.46
)
DESK_DISTAL = (-0.87, 0.15, -0.02, -3.03, 3.56, 3.50, 0.17, -0.01, 0.45, -0.28)
DESK_MU_MALE = 0.08
DESK_STEPS = (-1.5, -0.5, 0.5, 1.5)
DESK_ITEM_OFFSETS = (-0.4, -0.2, 0.0, 0.2, 0.4)
DESK_GROUPS = 10
DESK_GROUP_SIZE = (6, 6)


def desk_design(*, genders: tuple[str, str] | None = None) -> DyadDesign:
    return make_k_group("block", [DESK_GROUP_SIZE] * DESK_GROUPS, genders=genders)


def desk_item_bank() -> ItemBank:
    return ItemBank.shifted(DESK_STEPS, DESK_ITEM_OFFSETS)


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    """
    Everything needed to generate one dataset.

    Attributes:
        design: Who rates whom.
        item_bank: Step difficulties of every item.
        hyper: Trait hyperparameters; ``mu_male`` shifts male actors when the design has genders.
        distal: Distal coefficients. No distal outcomes when None.
        covariates: Latent-regression covariates and coefficients.
        cluster_sd: SD of the cluster intercept. No intercept when None or 0.
        seed: Seed of the simulation stream.
        male_label: Gender label that counts as male.
    """

    design: DyadDesign
    item_bank: ItemBank
    hyper: Hyperparameters
    distal: DistalCoefficients | None = None
    covariates: CovariateSpec | None = None
    cluster_sd: float | None = None
    seed: int = 0
    male_label: str = "M"

    def __post_init__(self) -> None:
        self.hyper.validate()
        if self.covariates is not None:
            c = self.covariates
            if c.x_alpha.shape[0] != self.design.n_individuals or c.x_beta.shape[0] != self.design.n_individuals:
                msg = "x_alpha and x_beta need one row per individual"
                raise InvalidArgumentError(msg)
            if c.x_gamma.shape[0] != self.design.n_dyads:
                msg = "x_gamma needs one row per directed dyad"
                raise InvalidArgumentError(msg)
        if self.cluster_sd is not None and self.cluster_sd < 0:
            msg = f"cluster_sd must be >= 0, got {self.cluster_sd}"
            raise InvalidArgumentError(msg)

    @property
    def male(self) -> np.ndarray | None:
        if all(g is None for g in self.design.genders):
            return None
        return np.array([g == self.male_label for g in self.design.genders], dtype=float)

    @property
    def uses_clusters(self) -> bool:
        return bool(self.cluster_sd) and any(c is not None for c in self.design.clusters)


@dataclass(frozen=True, eq=False)
class SimulatedData:
    config: SimulationConfig
    latents: LatentState
    responses: ResponseSet
    distal: DistalSet | None
    dyad_cluster: np.ndarray | None = None
    cluster_ids: tuple[str, ...] = ()
    truth: dict[str, float] = field(default_factory=dict)

    def to_data(self) -> DyadData:
        config = self.config
        individual, dyad = covariate_tables(config.design, config.covariates)
        return DyadData(
            design=config.design,
            responses=self.responses,
            categories=config.item_bank.categories,
            item_ids=config.item_bank.item_ids,
            distal=self.distal,
            individual_covariates=individual,
            dyad_covariates=dyad,
        )


def bivariate_normal_factor(sigma1: float, sigma2: float, rho: float) -> np.ndarray:
    """Lower Cholesky factor of a 2x2 covariance; rank 1 at ``|rho| = 1``."""
    floor = max(1.0 - rho * rho, 0.0)
    return np.array([[sigma1, 0.0], [rho * sigma2, sigma2 * np.sqrt(floor)]])


def draw_individual_traits(
    hyper: Hyperparameters,
    n: int,
    rng: np.random.Generator,
    *,
    male: np.ndarray | None = None,
    mean_alpha: np.ndarray | None = None,
    mean_beta: np.ndarray | None = None,
) -> np.ndarray:
    """Draw ``(alpha, beta)`` for ``n`` individuals; the male shift and covariate means are added."""
    if n < 1:
        msg = f"n must be >= 1, got {n}"
        raise InvalidArgumentError(msg)
    factor = bivariate_normal_factor(hyper.sigma_alpha, hyper.sigma_beta, hyper.rho_alpha_beta)
    traits = rng.standard_normal((n, 2)) @ factor.T
    if male is not None:
        traits[:, 0] += male * hyper.mu_male
    if mean_alpha is not None:
        traits[:, 0] += mean_alpha
    if mean_beta is not None:
        traits[:, 1] += mean_beta
    return traits


def draw_dyad_traits(
    hyper: Hyperparameters,
    undirected_pairs: int,
    rng: np.random.Generator,
    *,
    mean: np.ndarray | None = None,
) -> np.ndarray:
    """Draw ``(gamma_12, gamma_21)`` per undirected pair."""
    factor = bivariate_normal_factor(hyper.sigma_gamma, hyper.sigma_gamma, hyper.rho_gamma)
    traits = rng.standard_normal((undirected_pairs, 2)) @ factor.T
    if mean is not None:
        traits += mean
    return traits


def _cluster_assignment(design: DyadDesign) -> tuple[np.ndarray, tuple[str, ...]]:
    labels = [
        design.dyad_clusters[d] if design.dyad_clusters[d] is not None else design.clusters[a]
        for d, a in enumerate(design.actors)
    ]
    cluster_ids = tuple(dict.fromkeys(label for label in labels if label is not None))
    position = {label: j for j, label in enumerate(cluster_ids)}
    return np.array([position.get(label, -1) for label in labels], dtype=np.int64), cluster_ids


def composite_thetas(design: DyadDesign, latents: LatentState, dyad_cluster: np.ndarray | None = None) -> np.ndarray:
    """Composite trait of every directed dyad."""
    if latents.alpha.shape != (design.n_individuals,) or latents.beta.shape != (design.n_individuals,):
        msg = "Latents must cover every individual in the design"
        raise InvalidArgumentError(msg)
    if latents.gamma.shape != (design.n_pairs, 2):
        msg = "Latents must cover every undirected pair in the design"
        raise InvalidArgumentError(msg)
    theta = (
        latents.alpha[design.actors] + latents.beta[design.partners] + latents.gamma[design.pair_index, design.slot]
    )
    if dyad_cluster is not None and latents.u.size:
        theta = theta + np.where(dyad_cluster >= 0, latents.u[np.maximum(dyad_cluster, 0)], 0.0)
    return theta


def simulate_responses(
    config: SimulationConfig,
    latents: LatentState,
    rng: np.random.Generator,
    *,
    dyad_cluster: np.ndarray | None = None,
) -> ResponseSet:
    """One partial-credit draw per (directed dyad, item), dyad-major."""
    design = config.design
    theta = composite_thetas(design, latents, dyad_cluster)
    deltas, mask = config.item_bank.padded()
    n_items = config.item_bank.n_items
    dyad = np.repeat(np.arange(design.n_dyads), n_items)
    item = np.tile(np.arange(n_items), design.n_dyads)
    probs = np.exp(pcm_log_probs(theta[dyad], deltas[item], mask[item]))
    cumulative = np.cumsum(probs, axis=1)
    uniforms = rng.random(dyad.size)
    response = (uniforms[:, None] > cumulative[:, :-1]).sum(axis=1)
    response = np.minimum(response, config.item_bank.categories[item] - 1)
    return ResponseSet(dyad, item, response)


def simulate_distal(
    coeffs: DistalCoefficients,
    latents: LatentState,
    design: DyadDesign,
    rng: np.random.Generator,
) -> DistalSet:
    """One Bernoulli outcome per directed dyad."""
    pair, slot = design.pair_index, design.slot
    features = distal_features(
        latents.alpha[design.actors],
        latents.alpha[design.partners],
        latents.beta[design.actors],
        latents.beta[design.partners],
        latents.gamma[pair, slot],
        latents.gamma[pair, 1 - slot],
    )
    p = expit(features @ coeffs.b)
    outcome = (rng.random(design.n_dyads) < p).astype(np.int64)
    return DistalSet(np.arange(design.n_dyads), outcome)


def simulate(config: SimulationConfig) -> SimulatedData:
    """Generate one dataset from the simulation stream of ``config.seed``."""
    rng = simulation_generator(config.seed)
    design = config.design
    covariates = config.covariates
    traits = draw_individual_traits(
        config.hyper,
        design.n_individuals,
        rng,
        male=config.male,
        mean_alpha=covariates.mean_alpha() if covariates is not None else None,
        mean_beta=covariates.mean_beta() if covariates is not None else None,
    )
    gamma_mean = None
    if covariates is not None and covariates.c_gamma.size:
        gamma_mean = np.zeros((design.n_pairs, 2))
        gamma_mean[design.pair_index, design.slot] = covariates.mean_gamma()
    gamma = draw_dyad_traits(config.hyper, design.n_pairs, rng, mean=gamma_mean)

    dyad_cluster = None
    cluster_ids: tuple[str, ...] = ()
    u = np.zeros(0)
    if config.uses_clusters:
        dyad_cluster, cluster_ids = _cluster_assignment(design)
        u = rng.normal(0.0, config.cluster_sd, len(cluster_ids))
    latents = LatentState(traits[:, 0].copy(), traits[:, 1].copy(), gamma, u)

    responses = simulate_responses(config, latents, rng, dyad_cluster=dyad_cluster)
    distal = simulate_distal(config.distal, latents, design, rng) if config.distal is not None else None
    logger.debug(
        "Simulated %d responses over %d directed dyads (seed %d)", len(responses), design.n_dyads, config.seed
    )
    return SimulatedData(
        config=config,
        latents=latents,
        responses=responses,
        distal=distal,
        dyad_cluster=dyad_cluster,
        cluster_ids=cluster_ids,
        truth=truth_values(config),
    )


def truth_values(config: SimulationConfig) -> dict[str, float]:
    """Generating values under the parameter names a fit reports."""
    hyper = config.hyper
    truth = {
        "sigma_alpha": hyper.sigma_alpha,
        "sigma_beta": hyper.sigma_beta,
        "rho_alpha_beta": hyper.rho_alpha_beta,
        "sigma_gamma": hyper.sigma_gamma,
        "rho_gamma": hyper.rho_gamma,
    }
    if config.male is not None:
        truth["mu_male"] = hyper.mu_male
    if config.covariates is not None:
        c = config.covariates
        for role in ("alpha", "beta", "gamma"):
            for name, value in zip(getattr(c, f"names_{role}"), getattr(c, f"c_{role}")):
                truth[f"c_{role}[{name}]"] = float(value)
    if config.uses_clusters:
        truth["sigma_u"] = float(config.cluster_sd or 0.0)
    if config.distal is not None:
        truth.update({f"b{j}": float(v) for j, v in enumerate(config.distal.b)})
        truth.update(config.distal.free_values())
    for name, value in zip(config.item_bank.step_names(), (v for row in config.item_bank.steps for v in row)):
        truth[name] = value
    return truth


def draw_covariates(
    design: DyadDesign,
    coefficients: Mapping[str, Mapping[str, float]],
    rng: np.random.Generator,
) -> CovariateSpec:
    """
    Standard-normal covariate columns with the given coefficients.

    ``coefficients`` maps ``"alpha"``/``"beta"``/``"gamma"`` to ``{column: coefficient}``.
    An individual column used for both alpha and beta is drawn once.
    """
    individual_columns: dict[str, np.ndarray] = {}
    for role in ("alpha", "beta"):
        for name in coefficients.get(role, {}):
            if name not in individual_columns:
                individual_columns[name] = rng.standard_normal(design.n_individuals)
    dyad_columns = {name: rng.standard_normal(design.n_dyads) for name in coefficients.get("gamma", {})}

    def matrix(role: str, columns: dict[str, np.ndarray], rows: int) -> np.ndarray:
        names = list(coefficients.get(role, {}))
        return np.column_stack([columns[n] for n in names]) if names else np.zeros((rows, 0))

    return CovariateSpec(
        x_alpha=matrix("alpha", individual_columns, design.n_individuals),
        x_beta=matrix("beta", individual_columns, design.n_individuals),
        x_gamma=matrix("gamma", dyad_columns, design.n_dyads),
        c_alpha=np.array(list(coefficients.get("alpha", {}).values()), dtype=float),
        c_beta=np.array(list(coefficients.get("beta", {}).values()), dtype=float),
        c_gamma=np.array(list(coefficients.get("gamma", {}).values()), dtype=float),
        names_alpha=tuple(coefficients.get("alpha", {})),
        names_beta=tuple(coefficients.get("beta", {})),
        names_gamma=tuple(coefficients.get("gamma", {})),
    )


def covariate_tables(
    design: DyadDesign, covariates: CovariateSpec | None
) -> tuple[pd.DataFrame | None, pd.DataFrame | None]:
    """Individual (indexed by id) and dyad (design order) covariate tables of a ``CovariateSpec``."""
    if covariates is None:
        return None, None
    individual: dict[str, np.ndarray] = {}
    for role in ("alpha", "beta"):
        x = getattr(covariates, f"x_{role}")
        for k, name in enumerate(getattr(covariates, f"names_{role}")):
            individual.setdefault(name, x[:, k])
    individual_table = pd.DataFrame(individual, index=pd.Index(design.ids, name="id")) if individual else None
    dyad_table = None
    if covariates.names_gamma:
        dyad_table = pd.DataFrame(
            {name: covariates.x_gamma[:, k] for k, name in enumerate(covariates.names_gamma)},
        )
        dyad_table.insert(0, "partner_id", [design.ids[p] for p in design.partners])
        dyad_table.insert(0, "actor_id", [design.ids[a] for a in design.actors])
    return individual_table, dyad_table


@dataclass(frozen=True, eq=False)
class SimulationPlan:
    """
    Seed-free description of a simulation study arm.

    ``config(seed)`` draws the covariate columns from the covariate stream of
    ``seed`` and returns the ``SimulationConfig`` of one dataset.
    """

    design: DyadDesign
    item_bank: ItemBank
    hyper: Hyperparameters = DESK_HYPERPARAMETERS
    distal: DistalCoefficients | None = None
    covariates: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    cluster_sd: float | None = None
    male_label: str = "M"

    def config(self, seed: int) -> SimulationConfig:
        covariates = (
            draw_covariates(self.design, self.covariates, covariate_generator(seed))
            if any(self.covariates.get(role) for role in ("alpha", "beta", "gamma"))
            else None
        )
        return SimulationConfig(
            design=self.design,
            item_bank=self.item_bank,
            hyper=self.hyper,
            distal=self.distal,
            covariates=covariates,
            cluster_sd=self.cluster_sd,
            seed=seed,
            male_label=self.male_label,
        )

    def truth(self) -> dict[str, float]:
        return truth_values(self.config(0))

    @classmethod
    def desk(cls, *, distal: bool = True, genders: tuple[str, str] | None = None) -> SimulationPlan:
        hyper = DESK_HYPERPARAMETERS
        if genders is not None:
            hyper = Hyperparameters(**{**hyper.as_dict(), "mu_male": DESK_MU_MALE})
        return cls(
            design=desk_design(genders=genders),
            item_bank=desk_item_bank(),
            hyper=hyper,
            distal=DistalCoefficients(np.array(DESK_DISTAL)) if distal else None,
        )
