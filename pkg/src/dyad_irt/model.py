"""
Model types and link functions.

The composite trait of a directed dyad ``(a, p)`` is
``theta = alpha_a + beta_p + gamma_ap + mean_shift`` and drives a partial
credit model per item. A binary distal outcome per directed dyad is a
logistic regression on the six traits of the pair plus three products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
from scipy.special import expit, logsumexp

from .utils.errors import InvalidArgumentError


class Indeterminate:
    """Marker for a quantity that is 0/0 given its inputs."""

    _instance: ClassVar[Indeterminate | None] = None

    def __new__(cls) -> Indeterminate:  # noqa: PYI034
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INDETERMINATE"

    def __str__(self) -> str:
        return "indeterminate"

    def __reduce__(self) -> str:
        return "INDETERMINATE"


INDETERMINATE = Indeterminate()


@dataclass(frozen=True)
class VariancePartition:
    actor: float
    partner: float
    dyad: float

    @property
    def total(self) -> float:
        return self.actor + self.partner + self.dyad


@dataclass(frozen=True)
class Hyperparameters:
    """
    Social-relations hyperparameters of the latent traits.

    Attributes:
        sigma_alpha: SD of the actor trait.
        sigma_beta: SD of the partner trait.
        sigma_gamma: SD of the directed dyadic trait (both slots of a pair).
        rho_alpha_beta: Within-person correlation of actor and partner traits.
        rho_gamma: Within-pair correlation of the two directed dyadic traits.
        mu_male: Actor-trait mean shift for male actors. 0 when gender is not modelled.
    """

    sigma_alpha: float
    sigma_beta: float
    sigma_gamma: float
    rho_alpha_beta: float
    rho_gamma: float
    mu_male: float = 0.0

    def validate(self) -> None:
        for name in ("sigma_alpha", "sigma_beta", "sigma_gamma"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                msg = f"{name} must be a finite value >= 0, got {value}"
                raise InvalidArgumentError(msg)
        for name in ("rho_alpha_beta", "rho_gamma"):
            value = getattr(self, name)
            if not math.isfinite(value) or abs(value) > 1:
                msg = f"{name} must lie in [-1, 1], got {value}"
                raise InvalidArgumentError(msg)
        if not math.isfinite(self.mu_male):
            msg = f"mu_male must be finite, got {self.mu_male}"
            raise InvalidArgumentError(msg)

    @property
    def individual_covariance(self) -> np.ndarray:
        cross = self.rho_alpha_beta * self.sigma_alpha * self.sigma_beta
        return np.array([[self.sigma_alpha**2, cross], [cross, self.sigma_beta**2]])

    @property
    def dyad_covariance(self) -> np.ndarray:
        var = self.sigma_gamma**2
        return np.array([[var, self.rho_gamma * var], [self.rho_gamma * var, var]])

    def variance_partition(self) -> VariancePartition:
        """Shares of the actor, partner and dyadic variances in Var(theta)."""
        return variance_partition(self.sigma_alpha, self.sigma_beta, self.sigma_gamma)

    def as_dict(self) -> dict[str, float]:
        return {
            "sigma_alpha": self.sigma_alpha,
            "sigma_beta": self.sigma_beta,
            "sigma_gamma": self.sigma_gamma,
            "rho_alpha_beta": self.rho_alpha_beta,
            "rho_gamma": self.rho_gamma,
            "mu_male": self.mu_male,
        }


def variance_partition(sigma_alpha: float, sigma_beta: float, sigma_gamma: float) -> VariancePartition:
    components = np.array([sigma_alpha, sigma_beta, sigma_gamma], dtype=float) ** 2
    total = components.sum()
    if total <= 0:
        msg = "Variance partition needs a positive total variance"
        raise InvalidArgumentError(msg)
    actor, partner, dyad = components / total
    return VariancePartition(float(actor), float(partner), float(dyad))


@dataclass(frozen=True, eq=False)
class ItemBank:
    """
    Step difficulties of the partial credit items.

    ``steps[i]`` holds ``delta_{i,1} .. delta_{i,m_i-1}``; the zeroth step is
    the constant 0 and is not stored.
    """

    steps: tuple[tuple[float, ...], ...]
    item_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.steps:
            msg = "An item bank needs at least one item"
            raise InvalidArgumentError(msg)
        for i, row in enumerate(self.steps):
            if len(row) < 1:
                msg = f"Item {i} has fewer than 2 categories"
                raise InvalidArgumentError(msg)
            if not all(math.isfinite(v) for v in row):
                msg = f"Item {i} has non-finite step difficulties"
                raise InvalidArgumentError(msg)
        if not self.item_ids:
            object.__setattr__(self, "item_ids", tuple(str(i + 1) for i in range(len(self.steps))))
        if len(self.item_ids) != len(self.steps):
            msg = "item_ids must name every item"
            raise InvalidArgumentError(msg)

    @classmethod
    def from_rows(cls, rows: list[list[float]] | np.ndarray, item_ids: tuple[str, ...] = ()) -> ItemBank:
        return cls(tuple(tuple(float(v) for v in row) for row in rows), item_ids)

    @classmethod
    def shifted(
        cls,
        base_steps: tuple[float, ...],
        offsets: tuple[float, ...],
    ) -> ItemBank:
        """One item per offset, each with ``base_steps + offset``."""
        return cls(tuple(tuple(s + o for s in base_steps) for o in offsets))

    @property
    def n_items(self) -> int:
        return len(self.steps)

    @property
    def categories(self) -> np.ndarray:
        return np.array([len(row) + 1 for row in self.steps], dtype=np.int64)

    @property
    def max_steps(self) -> int:
        return max(len(row) for row in self.steps)

    def padded(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(deltas, mask)`` of shape (items, max_steps); padding is 0 and masked out."""
        deltas = np.zeros((self.n_items, self.max_steps))
        mask = np.zeros((self.n_items, self.max_steps), dtype=bool)
        for i, row in enumerate(self.steps):
            deltas[i, : len(row)] = row
            mask[i, : len(row)] = True
        return deltas, mask

    def step_names(self) -> list[str]:
        return [f"delta[{item},{k + 1}]" for item, row in zip(self.item_ids, self.steps) for k in range(len(row))]


@dataclass(frozen=True, eq=False)
class ResponseSet:
    """Long-format item responses: one row per (directed dyad, item)."""

    dyad: np.ndarray
    item: np.ndarray
    response: np.ndarray

    def __post_init__(self) -> None:
        for name in ("dyad", "item", "response"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if not (len(self.dyad) == len(self.item) == len(self.response)):
            msg = "Response columns must have equal lengths"
            raise InvalidArgumentError(msg)

    def __len__(self) -> int:
        return len(self.response)

    @classmethod
    def empty(cls) -> ResponseSet:
        return cls(np.zeros(0), np.zeros(0), np.zeros(0))


@dataclass(frozen=True, eq=False)
class DistalSet:
    """Binary distal outcomes: one row per directed dyad."""

    dyad: np.ndarray
    outcome: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "dyad", np.asarray(self.dyad, dtype=np.int64))
        object.__setattr__(self, "outcome", np.asarray(self.outcome, dtype=np.int64))
        if len(self.dyad) != len(self.outcome):
            msg = "Distal columns must have equal lengths"
            raise InvalidArgumentError(msg)
        if np.any((self.outcome != 0) & (self.outcome != 1)):
            msg = "Distal outcomes must be 0 or 1"
            raise InvalidArgumentError(msg)

    def __len__(self) -> int:
        return len(self.outcome)


@dataclass(eq=False)
class LatentState:
    """
    Latent traits.

    ``gamma`` has one row per undirected pair and one column per within-pair
    slot, so ``gamma[k, 0]`` and ``gamma[k, 1]`` are the two directed traits
    of pair ``k``. ``u`` holds one intercept per cluster (empty without clusters).
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    u: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def zeros(cls, n_individuals: int, n_pairs: int, n_clusters: int = 0) -> LatentState:
        return cls(np.zeros(n_individuals), np.zeros(n_individuals), np.zeros((n_pairs, 2)), np.zeros(n_clusters))

    def copy(self) -> LatentState:
        return LatentState(self.alpha.copy(), self.beta.copy(), self.gamma.copy(), self.u.copy())


DISTAL_TERMS = (
    "intercept",
    "alpha_a",
    "alpha_p",
    "beta_a",
    "beta_p",
    "gamma_ap",
    "gamma_pa",
    "alpha_a*alpha_p",
    "beta_a*beta_p",
    "gamma_ap*gamma_pa",
)
N_DISTAL_TERMS = len(DISTAL_TERMS)
_EXCHANGEABLE_PAIRS = ((1, 2), (3, 4), (5, 6))


def distal_basis(*, interactions: bool = True, exchangeable: bool = False) -> tuple[np.ndarray, tuple[str, ...]]:
    """
    Map free distal coefficients to the full ``b0..b9`` vector.

    Returns ``(basis, names)`` with ``b_full = basis @ b_free``. Exchangeable
    pairs collapse into one free coefficient named ``"b1=b2"`` and so on;
    without interactions b7..b9 are absent.
    """
    columns: list[np.ndarray] = []
    names: list[str] = []
    collapsed = {j for pair in _EXCHANGEABLE_PAIRS for j in pair} if exchangeable else set()
    last = N_DISTAL_TERMS if interactions else 7
    for j in range(last):
        if j in collapsed:
            if any(j == first for first, _ in _EXCHANGEABLE_PAIRS):
                second = j + 1
                column = np.zeros(N_DISTAL_TERMS)
                column[[j, second]] = 1.0
                columns.append(column)
                names.append(f"b{j}=b{second}")
            continue
        column = np.zeros(N_DISTAL_TERMS)
        column[j] = 1.0
        columns.append(column)
        names.append(f"b{j}")
    return np.column_stack(columns), tuple(names)


@dataclass(frozen=True, eq=False)
class DistalCoefficients:
    """Coefficients ``b0..b9`` of the distal logistic regression."""

    b: np.ndarray
    interactions: bool = True
    exchangeable: bool = False

    def __post_init__(self) -> None:
        b = np.asarray(self.b, dtype=float)
        if b.shape == (7,):
            b = np.concatenate([b, np.zeros(3)])
        if b.shape != (N_DISTAL_TERMS,):
            msg = f"Distal coefficients need 7 or 10 values, got {b.shape[0] if b.ndim else 0}"
            raise InvalidArgumentError(msg)
        if not np.all(np.isfinite(b)):
            msg = "Distal coefficients must be finite"
            raise InvalidArgumentError(msg)
        if not self.interactions and np.any(b[7:] != 0):
            msg = "b7..b9 must be 0 when interactions are off"
            raise InvalidArgumentError(msg)
        if self.exchangeable:
            for first, second in _EXCHANGEABLE_PAIRS:
                if b[first] != b[second]:
                    msg = f"Exchangeable coefficients need b{first} == b{second}"
                    raise InvalidArgumentError(msg)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_free(cls, free: np.ndarray, *, interactions: bool = True, exchangeable: bool = False) -> DistalCoefficients:
        basis, _ = distal_basis(interactions=interactions, exchangeable=exchangeable)
        return cls(basis @ np.asarray(free, dtype=float), interactions=interactions, exchangeable=exchangeable)

    def free_values(self) -> dict[str, float]:
        basis, names = distal_basis(interactions=self.interactions, exchangeable=self.exchangeable)
        # every free coordinate has a leading 1 in its column
        return {name: float(self.b[int(np.argmax(column))]) for name, column in zip(names, basis.T)}


@dataclass(frozen=True, eq=False)
class CovariateSpec:
    """
    Latent-regression covariates.

    ``x_alpha`` and ``x_beta`` have one row per individual, ``x_gamma`` one
    row per directed dyad. Each coefficient vector matches its matrix's columns.
    """

    x_alpha: np.ndarray
    x_beta: np.ndarray
    x_gamma: np.ndarray
    c_alpha: np.ndarray
    c_beta: np.ndarray
    c_gamma: np.ndarray
    names_alpha: tuple[str, ...] = ()
    names_beta: tuple[str, ...] = ()
    names_gamma: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for role in ("alpha", "beta", "gamma"):
            x = np.asarray(getattr(self, f"x_{role}"), dtype=float)
            c = np.asarray(getattr(self, f"c_{role}"), dtype=float).reshape(-1)
            if x.ndim == 1:
                x = x.reshape(-1, 1)
            if x.shape[1] != c.size:
                msg = f"x_{role} has {x.shape[1]} columns but c_{role} has {c.size} values"
                raise InvalidArgumentError(msg)
            names = getattr(self, f"names_{role}") or tuple(f"x{k + 1}" for k in range(c.size))
            if len(names) != c.size:
                msg = f"names_{role} must name every column of x_{role}"
                raise InvalidArgumentError(msg)
            object.__setattr__(self, f"x_{role}", x)
            object.__setattr__(self, f"c_{role}", c)
            object.__setattr__(self, f"names_{role}", tuple(names))

    def mean_alpha(self) -> np.ndarray:
        return self.x_alpha @ self.c_alpha

    def mean_beta(self) -> np.ndarray:
        return self.x_beta @ self.c_beta

    def mean_gamma(self) -> np.ndarray:
        return self.x_gamma @ self.c_gamma


def _require_finite(*values: float | np.ndarray) -> None:
    for value in values:
        if not np.all(np.isfinite(value)):
            msg = "Inputs must be finite"
            raise InvalidArgumentError(msg)


def composite_theta(alpha_a: float, beta_p: float, gamma_ap: float, mean_shift: float = 0.0) -> float:
    _require_finite(alpha_a, beta_p, gamma_ap, mean_shift)
    return alpha_a + beta_p + gamma_ap + mean_shift


# closest floats to 0 and 1 inside (0, 1)
_OPEN_UNIT = (np.finfo(float).tiny, np.nextafter(1.0, 0.0))


def _cumulative_logits(theta: float, delta: np.ndarray) -> np.ndarray:
    delta = np.asarray(delta, dtype=float).reshape(-1)
    if delta.size < 1:
        msg = "The partial credit model needs at least 2 categories"
        raise InvalidArgumentError(msg)
    _require_finite(theta, delta)
    return np.concatenate([[0.0], np.cumsum(theta - delta)])


def pcm_category_probs(theta: float, delta: np.ndarray | tuple[float, ...]) -> np.ndarray:
    """
    Category probabilities ``p_j ∝ exp(sum_{k<=j} (theta - delta_k))`` for ``j = 0..m-1``.

    Entries are clipped into the open unit interval, so extreme ``theta`` gives
    the smallest positive float instead of 0 and the float below 1 instead of 1.
    """
    logits = _cumulative_logits(theta, np.asarray(delta))
    return np.clip(np.exp(logits - logsumexp(logits)), *_OPEN_UNIT)


def pcm_log_likelihood(response: int, theta: float, delta: np.ndarray | tuple[float, ...]) -> float:
    logits = _cumulative_logits(theta, np.asarray(delta))
    if not 0 <= response < logits.size:
        msg = f"Response {response} outside categories 0..{logits.size - 1}"
        raise InvalidArgumentError(msg)
    return float(logits[response] - logsumexp(logits))


def pcm_log_probs(theta: np.ndarray, deltas: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """
    Vectorized category log-probabilities.

    ``theta`` has shape (R,), ``deltas`` and ``mask`` shape (R, S) with padded
    steps masked out. Returns (R, S + 1) log-probabilities; categories beyond
    an item's range get ``-inf``.
    """
    steps = np.where(mask, theta[:, None] - deltas, 0.0)
    logits = np.concatenate([np.zeros((theta.size, 1)), np.cumsum(steps, axis=1)], axis=1)
    valid = np.concatenate([np.ones((theta.size, 1), dtype=bool), mask], axis=1)
    logits = np.where(valid, logits, -np.inf)
    return logits - logsumexp(logits, axis=1, keepdims=True)


def pcm_response_log_likelihood(
    response: np.ndarray, theta: np.ndarray, deltas: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    log_probs = pcm_log_probs(theta, deltas, mask)
    return np.take_along_axis(log_probs, response[:, None], axis=1)[:, 0]


def pcm_tail_probs(theta: np.ndarray, deltas: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """``P(Y >= k)`` for ``k = 1..S``, shape (R, S); 0 beyond an item's range."""
    probs = np.exp(pcm_log_probs(theta, deltas, mask))
    tails = np.cumsum(probs[:, ::-1], axis=1)[:, ::-1]
    return tails[:, 1:]


def bivariate_normal_logpdf(
    x1: np.ndarray, x2: np.ndarray, sigma1: float, sigma2: float, rho: float
) -> np.ndarray:
    """Log-density of zero-mean bivariate normals; needs ``sigma > 0`` and ``|rho| < 1``."""
    z1 = np.asarray(x1) / sigma1
    z2 = np.asarray(x2) / sigma2
    one_minus = 1.0 - rho * rho
    quad = (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / one_minus
    return -math.log(2.0 * math.pi) - math.log(sigma1) - math.log(sigma2) - 0.5 * math.log(one_minus) - 0.5 * quad


def distal_features(
    alpha_a: np.ndarray,
    alpha_p: np.ndarray,
    beta_a: np.ndarray,
    beta_p: np.ndarray,
    gamma_ap: np.ndarray,
    gamma_pa: np.ndarray,
) -> np.ndarray:
    """Design matrix of the distal regression, columns in ``DISTAL_TERMS`` order."""
    alpha_a, alpha_p, beta_a, beta_p, gamma_ap, gamma_pa = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (alpha_a, alpha_p, beta_a, beta_p, gamma_ap, gamma_pa))
    )
    return np.stack(
        [
            np.ones_like(alpha_a),
            alpha_a,
            alpha_p,
            beta_a,
            beta_p,
            gamma_ap,
            gamma_pa,
            alpha_a * alpha_p,
            beta_a * beta_p,
            gamma_ap * gamma_pa,
        ],
        axis=-1,
    )


def distal_success_prob(  # noqa: PLR0913
    coeffs: DistalCoefficients,
    alpha_a: float,
    alpha_p: float,
    beta_a: float,
    beta_p: float,
    gamma_ap: float,
    gamma_pa: float,
) -> float:
    _require_finite(alpha_a, alpha_p, beta_a, beta_p, gamma_ap, gamma_pa)
    features = distal_features(alpha_a, alpha_p, beta_a, beta_p, gamma_ap, gamma_pa)
    return float(np.clip(expit(features @ coeffs.b), *_OPEN_UNIT))
