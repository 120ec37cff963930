"""Dyadic designs, identification and reduced-form covariance algebra."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np

from .model import INDETERMINATE, Hyperparameters, Indeterminate
from .utils.errors import DomainError, InvalidArgumentError

if TYPE_CHECKING:
    from collections.abc import Sequence

_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class DyadDesign:
    """
    Labeled directed-dyad graph.

    Individuals are indexed ``0..n-1`` in ``ids`` order; directed dyad ``d``
    is ``(actors[d], partners[d])``. Every unordered pair gets a contiguous
    id in first-seen order, and each directed dyad occupies slot 0 of its
    pair when its actor has the lower index, slot 1 otherwise.
    """

    ids: tuple[str, ...]
    actors: np.ndarray
    partners: np.ndarray
    groups: tuple[str | None, ...] = ()
    blocks: tuple[str | None, ...] = ()
    genders: tuple[str | None, ...] = ()
    clusters: tuple[str | None, ...] = ()
    dyad_clusters: tuple[str | None, ...] = ()

    def __post_init__(self) -> None:
        actors = np.asarray(self.actors, dtype=np.int64).reshape(-1)
        partners = np.asarray(self.partners, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "actors", actors)
        object.__setattr__(self, "partners", partners)
        n = len(self.ids)
        if len(set(self.ids)) != n:
            msg = "Individual ids must be unique"
            raise InvalidArgumentError(msg)
        if actors.shape != partners.shape:
            msg = "actors and partners must have equal lengths"
            raise InvalidArgumentError(msg)
        if actors.size and (actors.min() < 0 or partners.min() < 0 or max(actors.max(), partners.max()) >= n):
            msg = "Dyad endpoints must index existing individuals"
            raise InvalidArgumentError(msg)
        if np.any(actors == partners):
            d = int(np.flatnonzero(actors == partners)[0])
            msg = f"Directed dyad {d} has actor == partner ({self.ids[actors[d]]})"
            raise InvalidArgumentError(msg)
        if len(np.unique(actors * n + partners)) != actors.size:
            msg = "Duplicate directed dyads"
            raise InvalidArgumentError(msg)
        for name in ("groups", "blocks", "genders", "clusters"):
            labels = getattr(self, name)
            if not labels:
                object.__setattr__(self, name, (None,) * n)
            elif len(labels) != n:
                msg = f"{name} must have one label per individual"
                raise InvalidArgumentError(msg)
        if not self.dyad_clusters:
            object.__setattr__(self, "dyad_clusters", (None,) * actors.size)
        elif len(self.dyad_clusters) != actors.size:
            msg = "dyad_clusters must have one label per directed dyad"
            raise InvalidArgumentError(msg)

    @classmethod
    def from_edges(  # noqa: PLR0913
        cls,
        ids: Sequence[str],
        edges: Sequence[tuple[str, str]],
        *,
        groups: Sequence[str | None] = (),
        blocks: Sequence[str | None] = (),
        genders: Sequence[str | None] = (),
        clusters: Sequence[str | None] = (),
        dyad_clusters: Sequence[str | None] = (),
    ) -> DyadDesign:
        position = {individual: i for i, individual in enumerate(ids)}
        try:
            actors = [position[a] for a, _ in edges]
            partners = [position[p] for _, p in edges]
        except KeyError as err:
            msg = f"Unknown individual {err.args[0]!r} in edge list"
            raise InvalidArgumentError(msg) from err
        return cls(
            tuple(ids),
            np.array(actors, dtype=np.int64),
            np.array(partners, dtype=np.int64),
            tuple(groups),
            tuple(blocks),
            tuple(genders),
            tuple(clusters),
            tuple(dyad_clusters),
        )

    @property
    def n_individuals(self) -> int:
        return len(self.ids)

    @property
    def n_dyads(self) -> int:
        return int(self.actors.size)

    @property
    def n_pairs(self) -> int:
        return int(self.pairs.shape[0])

    @cached_property
    def _pair_structure(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        low = np.minimum(self.actors, self.partners)
        high = np.maximum(self.actors, self.partners)
        keys = low * self.n_individuals + high
        _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
        # renumber pairs in first-seen order
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        pair_index = rank[inverse.reshape(-1)]
        pairs = np.column_stack([low[first[order]], high[first[order]]]) if keys.size else np.zeros((0, 2), np.int64)
        slot = (self.actors > self.partners).astype(np.int64)
        return pair_index, slot, pairs

    @property
    def pair_index(self) -> np.ndarray:
        return self._pair_structure[0]

    @property
    def slot(self) -> np.ndarray:
        """0-based within-pair slot of every directed dyad."""
        return self._pair_structure[1]

    @property
    def within_pair_slot(self) -> np.ndarray:
        """Slot numbered 1 or 2, as used in reports."""
        return self.slot + 1

    @property
    def pairs(self) -> np.ndarray:
        """(U, 2) individual indices of each undirected pair, lower index first."""
        return self._pair_structure[2]

    @cached_property
    def undirected_pair_index(self) -> dict[tuple[str, str], int]:
        return {(self.ids[i], self.ids[j]): k for k, (i, j) in enumerate(self.pairs)}

    @cached_property
    def reverse(self) -> np.ndarray:
        """Index of the reverse directed dyad, -1 where it is absent."""
        lookup = {(int(a), int(p)): d for d, (a, p) in enumerate(zip(self.actors, self.partners))}
        return np.array(
            [lookup.get((int(p), int(a)), -1) for a, p in zip(self.actors, self.partners)], dtype=np.int64
        )

    @cached_property
    def dyad_lookup(self) -> dict[tuple[str, str], int]:
        return {(self.ids[a], self.ids[p]): d for d, (a, p) in enumerate(zip(self.actors, self.partners))}

    def dyad_labels(self) -> list[str]:
        return [f"{self.ids[a]}>{self.ids[p]}" for a, p in zip(self.actors, self.partners)]

    def out_degree(self) -> np.ndarray:
        return np.bincount(self.actors, minlength=self.n_individuals)

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.partners, minlength=self.n_individuals)

    def interaction_classes(self) -> list[np.ndarray]:
        """
        Partition individuals into classes with no dyad inside a class.

        Greedy coloring in index order; members of one class never share a
        dyad, so their actor/partner traits are conditionally independent.
        """
        neighbours: list[set[int]] = [set() for _ in range(self.n_individuals)]
        for a, p in zip(self.actors.tolist(), self.partners.tolist()):
            neighbours[a].add(p)
            neighbours[p].add(a)
        colour = np.full(self.n_individuals, -1, dtype=np.int64)
        for i in range(self.n_individuals):
            used = {int(colour[j]) for j in neighbours[i] if colour[j] >= 0}
            c = 0
            while c in used:
                c += 1
            colour[i] = c
        return [np.flatnonzero(colour == c) for c in range(int(colour.max()) + 1)] if colour.size else []


def make_round_robin(n: int, *, prefix: str = "") -> DyadDesign:
    if n < 2:  # noqa: PLR2004
        msg = f"A round robin needs n >= 2, got {n}"
        raise InvalidArgumentError(msg)
    ids = [f"{prefix}{i + 1}" for i in range(n)]
    edges = [(ids[a], ids[p]) for a in range(n) for p in range(n) if a != p]
    return DyadDesign.from_edges(ids, edges)


def make_block(
    p: int,
    q: int,
    *,
    prefix: str = "",
    block_labels: tuple[str, str] = ("A", "B"),
    genders: tuple[str, str] | None = None,
) -> DyadDesign:
    """Two blocks of sizes ``p`` and ``q``; every cross-block ordered pair, nothing within a block."""
    if p < 1 or q < 1:
        msg = f"Block sizes must be >= 1, got ({p}, {q})"
        raise InvalidArgumentError(msg)
    first = [f"{prefix}{block_labels[0]}{i + 1}" for i in range(p)]
    second = [f"{prefix}{block_labels[1]}{i + 1}" for i in range(q)]
    edges: list[tuple[str, str]] = []
    for a in first:
        for b in second:
            edges.extend([(a, b), (b, a)])
    block_of = [block_labels[0]] * p + [block_labels[1]] * q
    gender_of: list[str | None] = [genders[0]] * p + [genders[1]] * q if genders else []
    return DyadDesign.from_edges(first + second, edges, blocks=block_of, genders=gender_of)


def make_k_group(
    kind: str,
    group_sizes: Sequence[int | tuple[int, int] | list[int]],
    *,
    genders: tuple[str, str] | None = None,
    clusters_by_group: bool = False,
) -> DyadDesign:
    """
    Union of independent per-group designs, with no dyad crossing groups.

    ``kind`` is ``"round_robin"`` (sizes are counts) or ``"block"`` (sizes are
    ``(p, q)`` pairs). Group labels are ``"1".."k"``; ids are ``"g<k>-<id>"``.
    """
    if not group_sizes:
        msg = "A k-group design needs at least one group"
        raise InvalidArgumentError(msg)
    ids: list[str] = []
    edges: list[tuple[str, str]] = []
    groups: list[str] = []
    blocks: list[str | None] = []
    gender_of: list[str | None] = []
    for g, size in enumerate(group_sizes):
        prefix = f"g{g + 1}-"
        if kind == "round_robin":
            if not isinstance(size, int):
                msg = f"Group {g + 1}: round-robin sizes are counts, got {size!r}"
                raise InvalidArgumentError(msg)
            part = make_round_robin(size, prefix=prefix)
        elif kind == "block":
            if isinstance(size, int) or len(size) != 2:  # noqa: PLR2004
                msg = f"Group {g + 1}: block sizes are (p, q) pairs, got {size!r}"
                raise InvalidArgumentError(msg)
            part = make_block(int(size[0]), int(size[1]), prefix=prefix, genders=genders)
        else:
            msg = f"Unknown design kind {kind!r}; use 'round_robin' or 'block'"
            raise InvalidArgumentError(msg)
        ids.extend(part.ids)
        edges.extend((part.ids[a], part.ids[p]) for a, p in zip(part.actors, part.partners))
        groups.extend([str(g + 1)] * part.n_individuals)
        blocks.extend(part.blocks)
        gender_of.extend(part.genders)
    has_genders = any(label is not None for label in gender_of)
    return DyadDesign.from_edges(
        ids,
        edges,
        groups=groups,
        blocks=blocks,
        genders=gender_of if has_genders else (),
        clusters=groups if clusters_by_group else (),
    )


class CovariancePattern(str, Enum):
    VARIANCE = "variance"
    RECIPROCAL = "reciprocal"
    SHARED_ACTOR = "shared_actor"
    SHARED_PARTNER = "shared_partner"
    ACTOR_AS_PARTNER = "actor_as_partner"
    DISJOINT = "disjoint"


PATTERN_DESCRIPTIONS = {
    CovariancePattern.RECIPROCAL: "reciprocal (a,p)/(p,a)",
    CovariancePattern.SHARED_ACTOR: "shared actor (a,p)/(a,q)",
    CovariancePattern.SHARED_PARTNER: "shared partner (a,p)/(b,p)",
    CovariancePattern.ACTOR_AS_PARTNER: "actor-as-partner (a,p)/(b,a)",
}


class ParameterStatus(str, Enum):
    IDENTIFIED = "identified"
    UNIDENTIFIED = "unidentified"
    UNDEFINED = "undefined"


DECOMPOSITION_PARAMETERS = ("sigma_alpha", "sigma_beta", "sigma_gamma", "rho_alpha_beta", "rho_gamma")

REQUIRED_PATTERNS: dict[str, tuple[CovariancePattern, ...]] = {
    "sigma_alpha": (CovariancePattern.SHARED_ACTOR,),
    "sigma_beta": (CovariancePattern.SHARED_PARTNER,),
    "sigma_gamma": (CovariancePattern.SHARED_ACTOR, CovariancePattern.SHARED_PARTNER),
    "rho_alpha_beta": (
        CovariancePattern.SHARED_ACTOR,
        CovariancePattern.SHARED_PARTNER,
        CovariancePattern.ACTOR_AS_PARTNER,
    ),
    "rho_gamma": tuple(PATTERN_DESCRIPTIONS),
}


@dataclass(frozen=True)
class IdentificationReport:
    """
    Pattern evidence and per-parameter identification of a design.

    Counts are over ordered pairs of distinct directed dyads.
    """

    n_individuals: int
    n_dyads: int
    counts: dict[CovariancePattern, int]
    status: dict[str, ParameterStatus]
    composite_variance_identified: bool
    distinguishable: bool = False
    missing: dict[str, tuple[CovariancePattern, ...]] = field(default_factory=dict)

    @property
    def all_identified(self) -> bool:
        return all(s is ParameterStatus.IDENTIFIED for s in self.status.values())

    def is_identified(self, parameter: str) -> bool:
        return self.status.get(parameter) is ParameterStatus.IDENTIFIED

    def missing_patterns(self) -> list[CovariancePattern]:
        return [pattern for pattern in PATTERN_DESCRIPTIONS if self.counts[pattern] == 0]


def check_identification(design: DyadDesign) -> IdentificationReport:
    out_degree = design.out_degree()
    in_degree = design.in_degree()
    has_reverse = design.reverse >= 0
    reciprocal_by_actor = np.bincount(design.actors[has_reverse], minlength=design.n_individuals)
    counts = {
        CovariancePattern.RECIPROCAL: int(has_reverse.sum()),
        CovariancePattern.SHARED_ACTOR: int(np.sum(out_degree * (out_degree - 1))),
        CovariancePattern.SHARED_PARTNER: int(np.sum(in_degree * (in_degree - 1))),
        CovariancePattern.ACTOR_AS_PARTNER: int(np.sum(out_degree * in_degree - reciprocal_by_actor)),
    }

    def solvable(parameter: str) -> bool:
        return all(counts[pattern] >= 1 for pattern in REQUIRED_PATTERNS[parameter])

    status: dict[str, ParameterStatus] = {}
    for parameter in ("sigma_alpha", "sigma_beta", "sigma_gamma"):
        identified = design.n_dyads >= 1 and solvable(parameter)
        status[parameter] = ParameterStatus.IDENTIFIED if identified else ParameterStatus.UNIDENTIFIED
    switches_roles = bool(np.any((out_degree > 0) & (in_degree > 0)))
    # raters and examinees: correlations between roles do not exist
    rater_examinee = not switches_roles and (
        counts[CovariancePattern.SHARED_ACTOR] >= 1 or counts[CovariancePattern.SHARED_PARTNER] >= 1
    )
    for parameter in ("rho_alpha_beta", "rho_gamma"):
        if rater_examinee:
            status[parameter] = ParameterStatus.UNDEFINED
        else:
            status[parameter] = ParameterStatus.IDENTIFIED if solvable(parameter) else ParameterStatus.UNIDENTIFIED
    missing = {
        parameter: tuple(pattern for pattern in REQUIRED_PATTERNS[parameter] if counts[pattern] == 0)
        for parameter in DECOMPOSITION_PARAMETERS
        if status[parameter] is not ParameterStatus.IDENTIFIED
    }
    return IdentificationReport(
        n_individuals=design.n_individuals,
        n_dyads=design.n_dyads,
        counts=counts,
        status=status,
        composite_variance_identified=design.n_dyads >= 1,
        distinguishable=any(label is not None for label in design.blocks),
        missing=missing,
    )


def theoretical_covariance(hyper: Hyperparameters, pattern: CovariancePattern | str) -> float:
    try:
        pattern = CovariancePattern(pattern)
    except ValueError as err:
        msg = f"Unknown covariance pattern {pattern!r}"
        raise InvalidArgumentError(msg) from err
    sa, sb, sg = hyper.sigma_alpha, hyper.sigma_beta, hyper.sigma_gamma
    cross = hyper.rho_alpha_beta * sa * sb
    values = {
        CovariancePattern.VARIANCE: sa**2 + sb**2 + sg**2,
        CovariancePattern.RECIPROCAL: 2.0 * cross + hyper.rho_gamma * sg**2,
        CovariancePattern.SHARED_ACTOR: sa**2,
        CovariancePattern.SHARED_PARTNER: sb**2,
        CovariancePattern.ACTOR_AS_PARTNER: cross,
        CovariancePattern.DISJOINT: 0.0,
    }
    return float(values[pattern])


@dataclass(frozen=True)
class ReducedForm:
    """The five reduced-form moments of composite thetas."""

    variance: float
    reciprocal: float
    shared_actor: float
    shared_partner: float
    actor_as_partner: float

    @classmethod
    def from_hyperparameters(cls, hyper: Hyperparameters) -> ReducedForm:
        return cls(
            variance=theoretical_covariance(hyper, CovariancePattern.VARIANCE),
            reciprocal=theoretical_covariance(hyper, CovariancePattern.RECIPROCAL),
            shared_actor=theoretical_covariance(hyper, CovariancePattern.SHARED_ACTOR),
            shared_partner=theoretical_covariance(hyper, CovariancePattern.SHARED_PARTNER),
            actor_as_partner=theoretical_covariance(hyper, CovariancePattern.ACTOR_AS_PARTNER),
        )


@dataclass(frozen=True)
class SolvedHyperparameters:
    sigma_alpha: float
    sigma_beta: float
    sigma_gamma: float
    rho_alpha_beta: float | Indeterminate
    rho_gamma: float | Indeterminate

    @property
    def indeterminate(self) -> tuple[str, ...]:
        return tuple(
            name for name in ("rho_alpha_beta", "rho_gamma") if isinstance(getattr(self, name), Indeterminate)
        )

    def as_hyperparameters(self) -> Hyperparameters:
        if self.indeterminate:
            msg = f"Cannot build hyperparameters: {', '.join(self.indeterminate)} indeterminate"
            raise InvalidArgumentError(msg)
        return Hyperparameters(
            self.sigma_alpha,
            self.sigma_beta,
            self.sigma_gamma,
            float(self.rho_alpha_beta),  # type: ignore[arg-type]
            float(self.rho_gamma),  # type: ignore[arg-type]
        )


def _correlation(numerator: float, denominator: float, name: str) -> float | Indeterminate:
    if denominator <= _TOLERANCE:
        if abs(numerator) <= _TOLERANCE:
            return INDETERMINATE
        msg = f"{name}: covariance {numerator:g} with zero variance"
        raise DomainError(msg)
    rho = numerator / denominator
    if abs(rho) > 1.0 + _TOLERANCE:
        msg = f"{name} = {rho:g} violates |rho| <= 1"
        raise DomainError(msg)
    return float(np.clip(rho, -1.0, 1.0))


def solve_hyperparameters(reduced: ReducedForm) -> SolvedHyperparameters:
    """Invert the reduced-form identities; correlations that are 0/0 come back ``INDETERMINATE``."""
    for name in ("variance", "reciprocal", "shared_actor", "shared_partner", "actor_as_partner"):
        if not math.isfinite(getattr(reduced, name)):
            msg = f"Reduced-form {name} must be finite"
            raise InvalidArgumentError(msg)
    if reduced.shared_actor < 0:
        msg = f"shared-actor covariance {reduced.shared_actor:g} < 0 (it equals sigma_alpha^2)"
        raise DomainError(msg)
    if reduced.shared_partner < 0:
        msg = f"shared-partner covariance {reduced.shared_partner:g} < 0 (it equals sigma_beta^2)"
        raise DomainError(msg)
    var_gamma = reduced.variance - reduced.shared_actor - reduced.shared_partner
    if var_gamma < -_TOLERANCE:
        msg = f"implied sigma_gamma^2 = {var_gamma:g} < 0 (variance below shared-actor + shared-partner)"
        raise DomainError(msg)
    var_gamma = max(var_gamma, 0.0)
    sigma_alpha = math.sqrt(reduced.shared_actor)
    sigma_beta = math.sqrt(reduced.shared_partner)
    rho_alpha_beta = _correlation(reduced.actor_as_partner, sigma_alpha * sigma_beta, "rho_alpha_beta")
    rho_gamma = _correlation(reduced.reciprocal - 2.0 * reduced.actor_as_partner, var_gamma, "rho_gamma")
    return SolvedHyperparameters(sigma_alpha, sigma_beta, math.sqrt(var_gamma), rho_alpha_beta, rho_gamma)
