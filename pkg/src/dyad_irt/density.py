"""
Joint log-density of the dyadic IRT model and its gradient.

Latent traits are stored as totals: ``alpha`` includes its mean
``male * mu_male + x_alpha @ c_alpha``, and likewise for ``beta`` and
``gamma``. The prior densities act on the deviations from these means, the
response and distal likelihoods on the totals. The cluster intercept ``u``
enters the composite trait but not the distal regression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import expit

from .mean_terms import MeanTerms, build_mean_terms
from .model import (
    DistalCoefficients,
    DistalSet,
    Hyperparameters,
    LatentState,
    ResponseSet,
    distal_basis,
    distal_features,
    pcm_log_probs,
)
from .model_spec import ModelSpec, VarianceScale
from .utils.errors import InvalidArgumentError, SpecificationError

if TYPE_CHECKING:
    import pandas as pd

    from .design import DyadDesign

_LOG_2PI = math.log(2.0 * math.pi)

SD = "sd"
CORRELATION = "corr"
REAL = "real"


@dataclass(frozen=True, eq=False)
class DyadData:
    """
    Everything observed: the design, item responses and optional distal outcomes.

    ``categories[i]`` is the category count of item ``i``. Individual
    covariates are indexed in design id order, dyad covariates in design
    dyad order.
    """

    design: DyadDesign
    responses: ResponseSet
    categories: np.ndarray
    item_ids: tuple[str, ...] = ()
    distal: DistalSet | None = None
    individual_covariates: pd.DataFrame | None = None
    dyad_covariates: pd.DataFrame | None = None

    def __post_init__(self) -> None:
        categories = np.asarray(self.categories, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "categories", categories)
        if not self.item_ids:
            object.__setattr__(self, "item_ids", tuple(str(i + 1) for i in range(categories.size)))
        if len(self.item_ids) != categories.size:
            msg = "item_ids must name every item"
            raise InvalidArgumentError(msg)
        if np.any(categories < 2):  # noqa: PLR2004
            msg = "Every item needs at least 2 categories"
            raise InvalidArgumentError(msg)
        r = self.responses
        if len(r):
            if r.dyad.min() < 0 or r.dyad.max() >= self.design.n_dyads:
                msg = "Response dyad index does not resolve in the design"
                raise InvalidArgumentError(msg)
            if r.item.min() < 0 or r.item.max() >= categories.size:
                msg = "Response item index does not resolve in the item bank"
                raise InvalidArgumentError(msg)
            bad = (r.response < 0) | (r.response >= categories[r.item])
            if np.any(bad):
                row = int(np.flatnonzero(bad)[0])
                msg = f"Response row {row}: category {r.response[row]} outside 0..{categories[r.item[row]] - 1}"
                raise InvalidArgumentError(msg)
        if self.distal is not None and len(self.distal):
            if self.distal.dyad.min() < 0 or self.distal.dyad.max() >= self.design.n_dyads:
                msg = "Distal dyad index does not resolve in the design"
                raise InvalidArgumentError(msg)

    @property
    def n_items(self) -> int:
        return int(self.categories.size)


@dataclass(frozen=True, eq=False)
class ParameterLayout:
    """
    Ordered scalar parameters of a model.

    ``groups`` tag each name with its sampler block; ``kinds`` say whether it
    is an SD, a correlation or unbounded. Pinned parameters stay in the
    layout with ``free`` set to False.
    """

    names: tuple[str, ...]
    kinds: tuple[str, ...]
    groups: tuple[str, ...]
    free: np.ndarray
    defaults: np.ndarray
    item_index: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    step_index: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __post_init__(self) -> None:
        object.__setattr__(self, "_position", {name: i for i, name in enumerate(self.names)})

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: object) -> bool:
        return name in self._position  # type: ignore[attr-defined]

    def index(self, name: str) -> int:
        return self._position[name]  # type: ignore[attr-defined,no-any-return]

    def indices(self, group: str, *, free_only: bool = False) -> np.ndarray:
        return np.array(
            [i for i, g in enumerate(self.groups) if g == group and (self.free[i] or not free_only)], dtype=np.int64
        )

    def prefixed(self, prefix: str) -> np.ndarray:
        return np.array([i for i, name in enumerate(self.names) if name.startswith(prefix)], dtype=np.int64)

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(name for name, free in zip(self.names, self.free) if free)


@dataclass(frozen=True, eq=False)
class ModelParameters:
    """Values of every scalar parameter in layout order."""

    layout: ParameterLayout
    values: np.ndarray

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.layout.index(name)])

    def get(self, name: str, default: float = 0.0) -> float:
        return self[name] if name in self.layout else default

    def replace(self, **updates: float) -> ModelParameters:
        values = self.values.copy()
        for name, value in updates.items():
            values[self.layout.index(name)] = value
        return ModelParameters(self.layout, values)

    def as_dict(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(self.layout.names, self.values)}

    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters(
            self["sigma_alpha"],
            self["sigma_beta"],
            self["sigma_gamma"],
            self["rho_alpha_beta"],
            self["rho_gamma"],
            self.get("mu_male"),
        )


def build_layout(spec: ModelSpec, data: DyadData, terms: MeanTerms) -> ParameterLayout:
    entries: list[tuple[str, str, str, float]] = [
        ("sigma_alpha", SD, "individual_hyper", 1.0),
        ("sigma_beta", SD, "individual_hyper", 1.0),
        ("rho_alpha_beta", CORRELATION, "individual_hyper", 0.0),
        ("sigma_gamma", SD, "dyad_hyper", 1.0),
        ("rho_gamma", CORRELATION, "dyad_hyper", 0.0),
    ]
    if terms.has_gender:
        entries.append(("mu_male", REAL, "individual_mean", 0.0))
    entries.extend((f"c_alpha[{name}]", REAL, "individual_mean", 0.0) for name in terms.names_alpha)
    entries.extend((f"c_beta[{name}]", REAL, "individual_mean", 0.0) for name in terms.names_beta)
    entries.extend((f"c_gamma[{name}]", REAL, "dyad_mean", 0.0) for name in terms.names_gamma)
    if terms.n_clusters:
        entries.append(("sigma_u", SD, "cluster_hyper", 1.0))
    if spec.joint_distal:
        _, b_names = distal_basis(interactions=spec.distal_interactions, exchangeable=spec.exchangeable_distal)
        entries.extend((name, REAL, "distal", 0.0) for name in b_names)
    item_index: list[int] = []
    step_index: list[int] = []
    for i, (item, m) in enumerate(zip(data.item_ids, data.categories)):
        for k in range(int(m) - 1):
            entries.append((f"delta[{item},{k + 1}]", REAL, "items", 0.0))
            item_index.append(i)
            step_index.append(k)

    names = tuple(e[0] for e in entries)
    unknown = sorted(set(spec.fixed) - set(names))
    if unknown:
        msg = f"Pinned parameters not in this model: {', '.join(unknown)}"
        raise SpecificationError(msg)
    defaults = np.array([spec.fixed.get(e[0], e[3]) for e in entries], dtype=float)
    free = np.array([e[0] not in spec.fixed for e in entries], dtype=bool)
    for name, kind, value in zip(names, (e[1] for e in entries), defaults):
        if name in spec.fixed and not _in_kind_support(kind, value, name):
            msg = f"Pinned value {value} for {name} is outside its support"
            raise SpecificationError(msg)
    return ParameterLayout(
        names=names,
        kinds=tuple(e[1] for e in entries),
        groups=tuple(e[2] for e in entries),
        free=free,
        defaults=defaults,
        item_index=np.array(item_index, dtype=np.int64),
        step_index=np.array(step_index, dtype=np.int64),
    )


def _in_kind_support(kind: str, value: float, name: str) -> bool:
    if kind == SD:
        # a zero cluster SD switches the intercept off
        return value > 0 or (name == "sigma_u" and value == 0)
    if kind == CORRELATION:
        return abs(value) < 1
    return math.isfinite(value)


class DyadModel:
    """
    A model specification compiled against one dataset.

    Holds the index arrays every density evaluation needs, so the sampler
    and ``joint_log_density`` share one source of truth.
    """

    def __init__(self, data: DyadData, spec: ModelSpec | None = None, terms: MeanTerms | None = None) -> None:
        self.data = data
        self.spec = spec or ModelSpec()
        design = data.design
        if self.spec.joint_distal and data.distal is None:
            msg = "A joint distal fit needs distal outcome data"
            raise InvalidArgumentError(msg)
        self.terms = terms or build_mean_terms(
            self.spec,
            design,
            individual_covariates=data.individual_covariates,
            dyad_covariates=data.dyad_covariates,
        )
        self.layout = build_layout(self.spec, data, self.terms)

        self.n_individuals = design.n_individuals
        self.n_pairs = design.n_pairs
        self.cluster_active = bool(self.terms.n_clusters) and not (
            "sigma_u" in self.spec.fixed and self.spec.fixed["sigma_u"] == 0
        )
        self.n_clusters = self.terms.n_clusters if self.cluster_active else 0
        self.variance_scale = self.spec.prior.variance_scale
        self.sd_upper = self.spec.prior.sd_upper

        max_steps = int(data.categories.max()) - 1 if data.n_items else 0
        self.step_mask = np.zeros((data.n_items, max_steps), dtype=bool)
        for i, m in enumerate(data.categories):
            self.step_mask[i, : int(m) - 1] = True

        responses = data.responses
        self.resp_actor = design.actors[responses.dyad]
        self.resp_partner = design.partners[responses.dyad]
        self.resp_pair = design.pair_index[responses.dyad]
        self.resp_slot = design.slot[responses.dyad]
        self.resp_item = responses.item
        self.resp_y = responses.response
        self.resp_mask = self.step_mask[self.resp_item]
        self.resp_ge = (np.arange(1, max_steps + 1)[None, :] <= self.resp_y[:, None]) & self.resp_mask
        self.resp_cluster = (
            self.terms.dyad_cluster[responses.dyad]
            if self.cluster_active and self.terms.dyad_cluster is not None
            else None
        )

        self.use_distal = self.spec.joint_distal and data.distal is not None
        if self.use_distal:
            distal = data.distal
            assert distal is not None  # noqa: S101
            self.distal_actor = design.actors[distal.dyad]
            self.distal_partner = design.partners[distal.dyad]
            self.distal_pair = design.pair_index[distal.dyad]
            self.distal_slot = design.slot[distal.dyad]
            self.distal_z = distal.outcome.astype(float)
        self.distal_basis, self.distal_names = distal_basis(
            interactions=self.spec.distal_interactions, exchangeable=self.spec.exchangeable_distal
        )

        layout = self.layout
        self.idx_c_alpha = layout.prefixed("c_alpha[")
        self.idx_c_beta = layout.prefixed("c_beta[")
        self.idx_c_gamma = layout.prefixed("c_gamma[")
        self.idx_b = np.array([layout.index(name) for name in self.distal_names], dtype=np.int64) if self.use_distal else np.zeros(0, np.int64)
        self.idx_delta = layout.indices("items")
        self.idx_mu_male = layout.index("mu_male") if "mu_male" in layout else None
        self.idx_sigma_u = layout.index("sigma_u") if "sigma_u" in layout else None

        self.gamma_dyad_pair = design.pair_index
        self.gamma_dyad_slot = design.slot
        self.actors = design.actors
        self.partners = design.partners

    # -- parameters -----------------------------------------------------

    def default_parameters(self) -> ModelParameters:
        return ModelParameters(self.layout, self.layout.defaults.copy())

    def parameters(self, **values: float) -> ModelParameters:
        return self.default_parameters().replace(**values)

    def zero_latents(self) -> LatentState:
        return LatentState.zeros(self.n_individuals, self.n_pairs, self.n_clusters)

    def deltas(self, values: np.ndarray) -> np.ndarray:
        matrix = np.zeros(self.step_mask.shape)
        matrix[self.layout.item_index, self.layout.step_index] = values[self.idx_delta]
        return matrix

    def distal_coefficients(self, values: np.ndarray) -> DistalCoefficients:
        return DistalCoefficients.from_free(
            values[self.idx_b],
            interactions=self.spec.distal_interactions,
            exchangeable=self.spec.exchangeable_distal,
        )

    def in_support(self, values: np.ndarray) -> bool:
        for i, kind in enumerate(self.layout.kinds):
            value = values[i]
            if not math.isfinite(value):
                return False
            if kind == SD:
                if i == self.idx_sigma_u and not self.cluster_active:
                    continue
                if value <= 0 or (self.sd_upper is not None and value > self.sd_upper):
                    return False
            elif kind == CORRELATION and abs(value) >= 1:
                return False
        return True

    # -- mean structure -------------------------------------------------

    def mean_alpha(self, values: np.ndarray) -> np.ndarray:
        mean = self.terms.x_alpha @ values[self.idx_c_alpha]
        if self.idx_mu_male is not None and self.terms.male is not None:
            mean = mean + self.terms.male * values[self.idx_mu_male]
        return mean

    def mean_beta(self, values: np.ndarray) -> np.ndarray:
        return self.terms.x_beta @ values[self.idx_c_beta]

    def mean_gamma(self, values: np.ndarray) -> np.ndarray:
        """(U, 2) mean of each directed slot; slots without a directed dyad get 0."""
        mean = np.zeros((self.n_pairs, 2))
        mean[self.gamma_dyad_pair, self.gamma_dyad_slot] = self.terms.x_gamma @ values[self.idx_c_gamma]
        return mean

    # -- likelihood pieces ----------------------------------------------

    def theta(self, latents: LatentState) -> np.ndarray:
        theta = (
            latents.alpha[self.resp_actor]
            + latents.beta[self.resp_partner]
            + latents.gamma[self.resp_pair, self.resp_slot]
        )
        if self.resp_cluster is not None:
            theta = theta + latents.u[self.resp_cluster]
        return theta

    def response_loglik(self, theta: np.ndarray, deltas: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        """Log-likelihood of each response; ``theta`` and the result cover ``rows`` when given."""
        if theta.size == 0:
            return np.zeros(0)
        item = self.resp_item if rows is None else self.resp_item[rows]
        mask = self.resp_mask if rows is None else self.resp_mask[rows]
        y = self.resp_y if rows is None else self.resp_y[rows]
        log_probs = pcm_log_probs(theta, deltas[item], mask)
        return np.take_along_axis(log_probs, y[:, None], axis=1)[:, 0]

    def distal_design(self, latents: LatentState, rows: np.ndarray | None = None) -> np.ndarray:
        a, p = self.distal_actor, self.distal_partner
        pair, slot = self.distal_pair, self.distal_slot
        if rows is not None:
            a, p, pair, slot = a[rows], p[rows], pair[rows], slot[rows]
        return distal_features(
            latents.alpha[a],
            latents.alpha[p],
            latents.beta[a],
            latents.beta[p],
            latents.gamma[pair, slot],
            latents.gamma[pair, 1 - slot],
        )

    def distal_loglik(self, latents: LatentState, values: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        if not self.use_distal:
            return np.zeros(0)
        eta = self.distal_design(latents, rows) @ (self.distal_basis @ values[self.idx_b])
        z = self.distal_z if rows is None else self.distal_z[rows]
        return z * eta - np.logaddexp(0.0, eta)

    def individual_prior(self, latents: LatentState, values: np.ndarray) -> np.ndarray:
        layout = self.layout
        return _bvn_logpdf(
            latents.alpha - self.mean_alpha(values),
            latents.beta - self.mean_beta(values),
            values[layout.index("sigma_alpha")],
            values[layout.index("sigma_beta")],
            values[layout.index("rho_alpha_beta")],
        )

    def pair_prior(self, latents: LatentState, values: np.ndarray) -> np.ndarray:
        mean = self.mean_gamma(values)
        sigma = values[self.layout.index("sigma_gamma")]
        return _bvn_logpdf(
            latents.gamma[:, 0] - mean[:, 0],
            latents.gamma[:, 1] - mean[:, 1],
            sigma,
            sigma,
            values[self.layout.index("rho_gamma")],
        )

    def cluster_prior(self, latents: LatentState, values: np.ndarray) -> np.ndarray:
        if not self.cluster_active or self.idx_sigma_u is None:
            return np.zeros(0)
        sigma = values[self.idx_sigma_u]
        return -0.5 * _LOG_2PI - math.log(sigma) - 0.5 * (latents.u / sigma) ** 2

    def check_latents(self, latents: LatentState) -> None:
        expected = {
            "alpha": (self.n_individuals,),
            "beta": (self.n_individuals,),
            "gamma": (self.n_pairs, 2),
            "u": (self.n_clusters,),
        }
        for name, shape in expected.items():
            actual = np.shape(getattr(latents, name))
            if actual != shape:
                msg = f"Latent {name} has shape {actual}, the design needs {shape}"
                raise InvalidArgumentError(msg)

    def log_density(self, values: np.ndarray, latents: LatentState) -> float:
        self.check_latents(latents)
        if values.shape != (len(self.layout),):
            msg = f"Expected {len(self.layout)} parameter values, got {values.shape}"
            raise InvalidArgumentError(msg)
        if not self.in_support(values):
            return -math.inf
        total = float(np.sum(self.response_loglik(self.theta(latents), self.deltas(values))))
        total += float(np.sum(self.distal_loglik(latents, values)))
        total += float(np.sum(self.individual_prior(latents, values)))
        total += float(np.sum(self.pair_prior(latents, values)))
        total += float(np.sum(self.cluster_prior(latents, values)))
        return total

    # -- flat vector of continuous unknowns -----------------------------

    def unknown_names(self) -> list[str]:
        design = self.data.design
        ids = design.ids
        names = list(self.layout.free_names)
        names += [f"alpha[{i}]" for i in ids]
        names += [f"beta[{i}]" for i in ids]
        for low, high in design.pairs:
            names += [f"gamma[{ids[low]}>{ids[high]}]", f"gamma[{ids[high]}>{ids[low]}]"]
        names += [f"u[{c}]" for c in self.terms.cluster_ids[: self.n_clusters]]
        return names

    def pack(self, params: ModelParameters, latents: LatentState) -> np.ndarray:
        return np.concatenate(
            [params.values[self.layout.free], latents.alpha, latents.beta, latents.gamma.ravel(), latents.u]
        )

    def unpack(self, vector: np.ndarray) -> tuple[ModelParameters, LatentState]:
        n_free = int(self.layout.free.sum())
        n, u = self.n_individuals, self.n_pairs
        values = self.layout.defaults.copy()
        values[self.layout.free] = vector[:n_free]
        offset = n_free
        alpha = vector[offset : offset + n]
        beta = vector[offset + n : offset + 2 * n]
        gamma = vector[offset + 2 * n : offset + 2 * n + 2 * u].reshape(u, 2)
        cluster = vector[offset + 2 * n + 2 * u :]
        return ModelParameters(self.layout, values), LatentState(alpha.copy(), beta.copy(), gamma.copy(), cluster.copy())

    # -- gradient -------------------------------------------------------

    def gradient(self, values: np.ndarray, latents: LatentState) -> tuple[np.ndarray, np.ndarray, LatentState]:
        """Return the full-layout parameter gradient, its free entries and a ``LatentState`` of latent gradients."""
        layout = self.layout
        g_values = np.zeros(len(layout))
        g_alpha = np.zeros(self.n_individuals)
        g_beta = np.zeros(self.n_individuals)
        g_gamma = np.zeros((self.n_pairs, 2))
        g_u = np.zeros(self.n_clusters)

        # responses: d/dtheta = y - E[Y]; d/ddelta_k = P(Y >= k) - 1[y >= k]
        theta = self.theta(latents)
        if theta.size:
            deltas = self.deltas(values)
            probs = np.exp(pcm_log_probs(theta, deltas[self.resp_item], self.resp_mask))
            tails = np.cumsum(probs[:, ::-1], axis=1)[:, ::-1][:, 1:]
            g_theta = self.resp_y - tails.sum(axis=1)
            g_alpha += np.bincount(self.resp_actor, g_theta, minlength=self.n_individuals)
            g_beta += np.bincount(self.resp_partner, g_theta, minlength=self.n_individuals)
            np.add.at(g_gamma, (self.resp_pair, self.resp_slot), g_theta)
            if self.resp_cluster is not None:
                g_u += np.bincount(self.resp_cluster, g_theta, minlength=self.n_clusters)
            g_steps = np.where(self.resp_mask, tails - self.resp_ge, 0.0)
            g_delta = np.zeros(self.step_mask.shape)
            np.add.at(g_delta, self.resp_item, g_steps)
            g_values[self.idx_delta] = g_delta[layout.item_index, layout.step_index]

        if self.use_distal:
            self._distal_gradient(values, latents, g_values, g_alpha, g_beta, g_gamma)

        # individual traits
        i_sa, i_sb, i_rab = layout.index("sigma_alpha"), layout.index("sigma_beta"), layout.index("rho_alpha_beta")
        dx1, dx2, ds1, ds2, dr = _bvn_grad(
            latents.alpha - self.mean_alpha(values),
            latents.beta - self.mean_beta(values),
            values[i_sa],
            values[i_sb],
            values[i_rab],
        )
        g_alpha += dx1
        g_beta += dx2
        g_values[i_sa] += ds1.sum()
        g_values[i_sb] += ds2.sum()
        g_values[i_rab] += dr.sum()
        if self.idx_mu_male is not None and self.terms.male is not None:
            g_values[self.idx_mu_male] -= float(self.terms.male @ dx1)
        g_values[self.idx_c_alpha] -= self.terms.x_alpha.T @ dx1
        g_values[self.idx_c_beta] -= self.terms.x_beta.T @ dx2

        # dyadic traits
        i_sg, i_rg = layout.index("sigma_gamma"), layout.index("rho_gamma")
        mean = self.mean_gamma(values)
        gx1, gx2, gs1, gs2, gr = _bvn_grad(
            latents.gamma[:, 0] - mean[:, 0],
            latents.gamma[:, 1] - mean[:, 1],
            values[i_sg],
            values[i_sg],
            values[i_rg],
        )
        g_gamma[:, 0] += gx1
        g_gamma[:, 1] += gx2
        g_values[i_sg] += gs1.sum() + gs2.sum()
        g_values[i_rg] += gr.sum()
        g_slot = np.column_stack([gx1, gx2])[self.gamma_dyad_pair, self.gamma_dyad_slot]
        g_values[self.idx_c_gamma] -= self.terms.x_gamma.T @ g_slot

        # cluster intercepts
        if self.cluster_active and self.idx_sigma_u is not None:
            sigma = values[self.idx_sigma_u]
            g_u -= latents.u / sigma**2
            g_values[self.idx_sigma_u] += float(np.sum(-1.0 / sigma + latents.u**2 / sigma**3))

        return g_values, g_values[layout.free], LatentState(g_alpha, g_beta, g_gamma, g_u)

    def _distal_gradient(  # noqa: PLR0913
        self,
        values: np.ndarray,
        latents: LatentState,
        g_values: np.ndarray,
        g_alpha: np.ndarray,
        g_beta: np.ndarray,
        g_gamma: np.ndarray,
    ) -> None:
        features = self.distal_design(latents)
        b = self.distal_basis @ values[self.idx_b]
        residual = self.distal_z - expit(features @ b)
        g_values[self.idx_b] += self.distal_basis.T @ (features.T @ residual)

        a, p = self.distal_actor, self.distal_partner
        own, other = self.distal_slot, 1 - self.distal_slot
        alpha_a, alpha_p = latents.alpha[a], latents.alpha[p]
        beta_a, beta_p = latents.beta[a], latents.beta[p]
        gamma_ap = latents.gamma[self.distal_pair, own]
        gamma_pa = latents.gamma[self.distal_pair, other]
        n = self.n_individuals
        g_alpha += np.bincount(a, residual * (b[1] + b[7] * alpha_p), minlength=n)
        g_alpha += np.bincount(p, residual * (b[2] + b[7] * alpha_a), minlength=n)
        g_beta += np.bincount(a, residual * (b[3] + b[8] * beta_p), minlength=n)
        g_beta += np.bincount(p, residual * (b[4] + b[8] * beta_a), minlength=n)
        np.add.at(g_gamma, (self.distal_pair, own), residual * (b[5] + b[9] * gamma_pa))
        np.add.at(g_gamma, (self.distal_pair, other), residual * (b[6] + b[9] * gamma_ap))


def _bvn_logpdf(x1: np.ndarray, x2: np.ndarray, s1: float, s2: float, rho: float) -> np.ndarray:
    z1 = x1 / s1
    z2 = x2 / s2
    one_minus = 1.0 - rho * rho
    quad = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / one_minus
    return -_LOG_2PI - math.log(s1) - math.log(s2) - 0.5 * math.log(one_minus) - 0.5 * quad


def _bvn_grad(
    x1: np.ndarray, x2: np.ndarray, s1: float, s2: float, rho: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Elementwise partials of ``_bvn_logpdf`` in ``x1, x2, s1, s2, rho``."""
    z1 = x1 / s1
    z2 = x2 / s2
    one_minus = 1.0 - rho * rho
    r1 = (z1 - rho * z2) / one_minus
    r2 = (z2 - rho * z1) / one_minus
    quad = z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2
    d_x1 = -r1 / s1
    d_x2 = -r2 / s2
    d_s1 = -1.0 / s1 + r1 * z1 / s1
    d_s2 = -1.0 / s2 + r2 * z2 / s2
    d_rho = rho / one_minus + z1 * z2 / one_minus - rho * quad / one_minus**2
    return d_x1, d_x2, d_s1, d_s2, d_rho


def joint_log_density(params: ModelParameters, latents: LatentState, model: DyadModel) -> float:
    """
    Unnormalized log posterior of all unknowns.

    Sums the item-response log-likelihood, the joint distal log-likelihood
    (when the model fits it jointly), the trait log-densities given the
    hyperparameters and the flat log-priors. Parameters outside the prior
    support give ``-inf``.
    """
    if params.layout is not model.layout:
        msg = "Parameters were built for a different model layout"
        raise InvalidArgumentError(msg)
    return model.log_density(params.values, latents)


def joint_log_density_grad(params: ModelParameters, latents: LatentState, model: DyadModel) -> tuple[float, np.ndarray]:
    """Value and gradient over ``model.unknown_names()`` (free parameters, then latents)."""
    value = joint_log_density(params, latents, model)
    _, free_grad, latent_grad = model.gradient(params.values, latents)
    return value, np.concatenate(
        [free_grad, latent_grad.alpha, latent_grad.beta, latent_grad.gamma.ravel(), latent_grad.u]
    )


def prior_log_jacobian(model: DyadModel, values: np.ndarray, indices: np.ndarray) -> float:
    """
    Log-Jacobian of the sampler's transform for the given parameters.

    SDs are sampled on the log scale. A flat prior on the variance adds
    ``2 log sigma`` (``log sigma`` for a flat prior on the SD itself);
    correlations on the atanh scale add ``log(1 - rho^2)``.
    """
    total = 0.0
    sd_power = 2.0 if model.variance_scale is VarianceScale.VARIANCE else 1.0
    for i in indices:
        kind = model.layout.kinds[i]
        if kind == SD:
            total += sd_power * math.log(values[i])
        elif kind == CORRELATION:
            total += math.log1p(-values[i] ** 2)
    return total
