"""
Adaptive random-walk Metropolis-within-Gibbs chain.

One iteration updates, in order: the actor/partner traits of every
individual (one vectorized sweep per class of individuals sharing no dyad),
the dyadic trait pairs, the cluster intercepts, the step difficulties per
item, then the scalar blocks on transformed scales (log for SDs, atanh for
correlations). Proposal scales adapt to the acceptance window during
burn-in only and are frozen afterwards.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .density import CORRELATION, SD, DyadModel, prior_log_jacobian
from .model import LatentState
from .utils.rng import chain_generator

if TYPE_CHECKING:
    from .inference import McmcConfig

logger = logging.getLogger(__name__)

# atanh(1 - 1e-12); correlation moves beyond it reflect
Z_MAX = math.atanh(1.0 - 1e-12)
_OPTIMAL_SCALE = 2.38
_RIDGE = 1e-8

GLOBAL_BLOCKS = ("individual_hyper", "dyad_hyper", "individual_mean", "dyad_mean", "cluster_hyper", "distal")
BASE_GLOBAL_BLOCKS = ("individual_hyper", "dyad_hyper")


class AdaptiveBlock:
    """
    Random-walk proposals for ``n_units`` independent units of dimension ``dim``.

    Each unit has its own log-scale, tuned every ``window`` iterations towards
    ``[low, high]`` acceptance. From a quarter of burn-in on, the empirical
    covariance of every unit is accumulated; from half of burn-in on it shapes
    the proposals, scaled by ``2.38^2 / dim``.
    """

    def __init__(  # noqa: PLR0913
        self,
        n_units: int,
        dim: int,
        *,
        initial_scale: float,
        window: int,
        low: float,
        high: float,
        burn_in: int,
        mask: np.ndarray | None = None,
    ) -> None:
        self.n_units = n_units
        self.dim = dim
        self.window = window
        self.low = low
        self.high = high
        self.burn_in = burn_in
        self.mask = mask
        self.log_scale = np.full(n_units, math.log(initial_scale))
        self.chol = np.broadcast_to(np.eye(dim), (n_units, dim, dim)).copy()
        self._window_tries = np.zeros(n_units)
        self._window_accepts = np.zeros(n_units)
        self._windows = 0
        self._count = 0
        self._mean = np.zeros((n_units, dim))
        self._m2 = np.zeros((n_units, dim, dim))
        self.tries = 0
        self.accepts = 0
        self._shaped = False

    def propose(self, rng: np.random.Generator, current: np.ndarray, units: np.ndarray | None = None) -> np.ndarray:
        units = np.arange(self.n_units) if units is None else units
        z = rng.standard_normal((units.size, self.dim))
        step = np.exp(self.log_scale[units])[:, None] * np.einsum("kij,kj->ki", self.chol[units], z)
        if self.mask is not None:
            step = np.where(self.mask[units], step, 0.0)
        return current + step

    def record(self, units: np.ndarray | None, accepted: np.ndarray, iteration: int) -> None:
        units = np.arange(self.n_units) if units is None else units
        if iteration < self.burn_in:
            self._window_tries[units] += 1
            self._window_accepts[units] += accepted
        else:
            self.tries += accepted.size
            self.accepts += int(accepted.sum())

    def observe(self, state: np.ndarray, iteration: int) -> None:
        """Feed the current state of all units to the covariance estimate."""
        if not self.burn_in // 4 <= iteration < self.burn_in:
            return
        self._count += 1
        delta = state - self._mean
        self._mean += delta / self._count
        self._m2 += np.einsum("ki,kj->kij", delta, state - self._mean)

    def adapt(self, iteration: int) -> None:
        """End-of-iteration tuning; a no-op after burn-in."""
        if iteration >= self.burn_in or (iteration + 1) % self.window:
            return
        self._windows += 1
        tried = self._window_tries > 0
        rate = np.divide(self._window_accepts, self._window_tries, out=np.zeros(self.n_units), where=tried)
        step = max(0.05, 0.5 / math.sqrt(self._windows))
        self.log_scale += np.where(tried & (rate > self.high), step, 0.0)
        self.log_scale -= np.where(tried & (rate < self.low), step, 0.0)
        self._window_tries[:] = 0
        self._window_accepts[:] = 0
        if self._count >= max(self.window, 2 * self.dim) and iteration + 1 >= self.burn_in // 2:
            switching = not self._shaped
            self._update_shape()
            if switching:
                self.log_scale[:] = math.log(_OPTIMAL_SCALE / math.sqrt(self.dim))
                self._shaped = True

    def _update_shape(self) -> None:
        cov = self._m2 / (self._count - 1) + _RIDGE * np.eye(self.dim)
        if self.mask is not None:
            # padded coordinates never move; give them unit variance
            frozen = ~self.mask
            cov = np.where(frozen[:, :, None] | frozen[:, None, :], 0.0, cov)
            cov[:, np.arange(self.dim), np.arange(self.dim)] += frozen
        try:
            self.chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            logger.debug("Empirical proposal covariance not positive definite; keeping previous shape")

    @property
    def acceptance_rate(self) -> float:
        return self.accepts / self.tries if self.tries else math.nan


@dataclass
class ChainResult:
    """Retained output of one chain."""

    chain: int
    draws: np.ndarray
    log_density: np.ndarray
    acceptance: dict[str, float]
    latent_mean: np.ndarray
    latent_m2: np.ndarray
    latent_count: int
    latent_draws: np.ndarray | None = None


class _Transform:
    """Elementwise map between natural and sampling scales of the scalar parameters."""

    def __init__(self, kinds: list[str]) -> None:
        self.sd = np.array([k == SD for k in kinds])
        self.corr = np.array([k == CORRELATION for k in kinds])

    def forward(self, values: np.ndarray) -> np.ndarray:
        out = values.copy()
        out[self.sd] = np.log(values[self.sd])
        out[self.corr] = np.arctanh(values[self.corr])
        return out

    def inverse(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map back to natural values; also return the reflected sampling-scale point."""
        z = z.copy()
        over = self.corr & (np.abs(z) > Z_MAX)
        z[over] = np.sign(z[over]) * (2.0 * Z_MAX - np.abs(z[over]))
        out = z.copy()
        out[self.sd] = np.exp(z[self.sd])
        out[self.corr] = np.tanh(z[self.corr])
        return out, z


class ChainSampler:
    """State and update sweeps of one chain."""

    def __init__(self, model: DyadModel, config: McmcConfig, chain: int) -> None:
        self.model = model
        self.config = config
        self.chain = chain
        self.rng = chain_generator(config.seed, chain)
        design = model.data.design
        self.values = model.layout.defaults.copy()
        self.latents = model.zero_latents()
        self._initialize()

        self.deltas = model.deltas(self.values)
        self.theta = model.theta(self.latents)
        self.resp_ll = model.response_loglik(self.theta, self.deltas)
        self.distal_ll = model.distal_loglik(self.latents, self.values)

        adapt = {
            "window": config.adaptation_window,
            "low": config.target_accept_low,
            "high": config.target_accept_high,
            "burn_in": config.burn_in,
        }
        self.classes = self._class_index(design.interaction_classes())
        self.individual_block = AdaptiveBlock(model.n_individuals, 2, initial_scale=0.5, **adapt)
        self.gamma_block = AdaptiveBlock(model.n_pairs, 2, initial_scale=0.5, **adapt)
        self.u_block = AdaptiveBlock(model.n_clusters, 1, initial_scale=0.3, **adapt) if model.n_clusters else None

        layout = model.layout
        free_steps = np.zeros(model.step_mask.shape, dtype=bool)
        delta_free = layout.free[model.idx_delta]
        free_steps[layout.item_index[delta_free], layout.step_index[delta_free]] = True
        self.delta_units = np.flatnonzero(free_steps.any(axis=1))
        self.delta_block = (
            AdaptiveBlock(
                model.step_mask.shape[0],
                model.step_mask.shape[1],
                initial_scale=0.2,
                mask=free_steps,
                **adapt,
            )
            if self.delta_units.size
            else None
        )

        self.global_blocks: list[tuple[str, np.ndarray, AdaptiveBlock, _Transform]] = []
        for group in GLOBAL_BLOCKS:
            indices = layout.indices(group, free_only=True)
            if group == "cluster_hyper" and not model.cluster_active:
                continue
            if indices.size == 0:
                continue
            kinds = [layout.kinds[i] for i in indices]
            block = AdaptiveBlock(1, indices.size, initial_scale=0.1, **adapt)
            self.global_blocks.append((group, indices, block, _Transform(kinds)))

    # -- initialization -------------------------------------------------

    def _initialize(self) -> None:
        """Overdispersed start: base quantities first, extensions after, so pinned extensions leave the base stream intact."""
        rng, jitter, model = self.rng, self.config.init_jitter, self.model
        layout = model.layout
        values = self.values
        free_delta = model.idx_delta[layout.free[model.idx_delta]]
        values[free_delta] = rng.normal(0.0, jitter, free_delta.size)
        for group in BASE_GLOBAL_BLOCKS:
            self._jitter_scalars(layout.indices(group, free_only=True), 0.5 * jitter)
        n, u = model.n_individuals, model.n_pairs
        self.latents.alpha[:] = rng.normal(0.0, 0.5 * jitter, n)
        self.latents.beta[:] = rng.normal(0.0, 0.5 * jitter, n)
        self.latents.gamma[:] = rng.normal(0.0, 0.5 * jitter, (u, 2))
        for group in ("individual_mean", "dyad_mean"):
            self._jitter_scalars(layout.indices(group, free_only=True), 0.5 * jitter)
        if model.cluster_active:
            self._jitter_scalars(layout.indices("cluster_hyper", free_only=True), 0.5 * jitter)
            self.latents.u[:] = rng.normal(0.0, 0.5 * jitter, model.n_clusters)
        self._jitter_scalars(layout.indices("distal", free_only=True), 0.5 * jitter)

    def _jitter_scalars(self, indices: np.ndarray, scale: float) -> None:
        if indices.size == 0:
            return
        transform = _Transform([self.model.layout.kinds[i] for i in indices])
        z = transform.forward(self.values[indices]) + self.rng.normal(0.0, scale, indices.size)
        natural, _ = transform.inverse(z)
        if self.model.sd_upper is not None:
            natural = np.where(transform.sd, np.minimum(natural, self.model.sd_upper), natural)
        self.values[indices] = natural

    def _class_index(self, classes: list[np.ndarray]) -> list[dict[str, np.ndarray]]:
        model = self.model
        n = model.n_individuals
        index = []
        for members in classes:
            inside = np.zeros(n, dtype=bool)
            inside[members] = True
            rows = np.flatnonzero(inside[model.resp_actor] | inside[model.resp_partner])
            as_actor = inside[model.resp_actor[rows]]
            owner = np.where(as_actor, model.resp_actor[rows], model.resp_partner[rows])
            entry = {"members": members, "rows": rows, "as_actor": as_actor, "owner": owner}
            if model.use_distal:
                d_rows = np.flatnonzero(inside[model.distal_actor] | inside[model.distal_partner])
                entry["distal_rows"] = d_rows
                entry["distal_owner"] = np.where(
                    inside[model.distal_actor[d_rows]], model.distal_actor[d_rows], model.distal_partner[d_rows]
                )
            index.append(entry)
        return index

    # -- sweeps ---------------------------------------------------------

    def step(self, iteration: int) -> None:
        model = self.model
        self.theta = model.theta(self.latents)
        self.resp_ll = model.response_loglik(self.theta, self.deltas)
        self._update_individuals(iteration)
        self._update_gammas(iteration)
        if self.u_block is not None:
            self._update_clusters(iteration)
        if self.delta_block is not None:
            self._update_deltas(iteration)
        for group, indices, block, transform in self.global_blocks:
            self._update_global(group, indices, block, transform, iteration)

        self.individual_block.observe(np.column_stack([self.latents.alpha, self.latents.beta]), iteration)
        self.individual_block.adapt(iteration)
        self.gamma_block.observe(self.latents.gamma, iteration)
        self.gamma_block.adapt(iteration)
        if self.u_block is not None:
            self.u_block.observe(self.latents.u[:, None], iteration)
            self.u_block.adapt(iteration)
        if self.delta_block is not None:
            self.delta_block.observe(self.deltas, iteration)
            self.delta_block.adapt(iteration)
        for _, indices, block, transform in self.global_blocks:
            block.observe(transform.forward(self.values[indices])[None, :], iteration)
            block.adapt(iteration)

    def _update_individuals(self, iteration: int) -> None:
        model, latents, rng = self.model, self.latents, self.rng
        n = model.n_individuals
        mean_alpha = model.mean_alpha(self.values)
        mean_beta = model.mean_beta(self.values)
        layout = model.layout
        sa = self.values[layout.index("sigma_alpha")]
        sb = self.values[layout.index("sigma_beta")]
        rab = self.values[layout.index("rho_alpha_beta")]
        for entry in self.classes:
            units = entry["members"]
            current = np.column_stack([latents.alpha[units], latents.beta[units]])
            proposal = self.individual_block.propose(rng, current, units)
            shift_alpha = np.zeros(n)
            shift_beta = np.zeros(n)
            shift_alpha[units] = proposal[:, 0] - current[:, 0]
            shift_beta[units] = proposal[:, 1] - current[:, 1]

            rows, owner = entry["rows"], entry["owner"]
            theta_new = self.theta[rows] + np.where(entry["as_actor"], shift_alpha[owner], shift_beta[owner])
            ll_new = model.response_loglik(theta_new, self.deltas, rows)
            gain = np.bincount(owner, ll_new - self.resp_ll[rows], minlength=n)

            if model.use_distal:
                proposed = LatentState(latents.alpha + shift_alpha, latents.beta + shift_beta, latents.gamma, latents.u)
                d_rows, d_owner = entry["distal_rows"], entry["distal_owner"]
                distal_new = model.distal_loglik(proposed, self.values, d_rows)
                gain += np.bincount(d_owner, distal_new - self.distal_ll[d_rows], minlength=n)

            prior_new = _bvn(proposal[:, 0] - mean_alpha[units], proposal[:, 1] - mean_beta[units], sa, sb, rab)
            prior_old = _bvn(current[:, 0] - mean_alpha[units], current[:, 1] - mean_beta[units], sa, sb, rab)
            log_ratio = gain[units] + prior_new - prior_old
            accepted = np.log(rng.random(units.size)) < log_ratio
            self.individual_block.record(units, accepted, iteration)

            if not accepted.any():
                continue
            won = np.zeros(n, dtype=bool)
            won[units[accepted]] = True
            latents.alpha[units[accepted]] = proposal[accepted, 0]
            latents.beta[units[accepted]] = proposal[accepted, 1]
            keep = won[owner]
            self.theta[rows[keep]] = theta_new[keep]
            self.resp_ll[rows[keep]] = ll_new[keep]
            if model.use_distal:
                keep_d = won[d_owner]
                self.distal_ll[d_rows[keep_d]] = distal_new[keep_d]

    def _update_gammas(self, iteration: int) -> None:
        model, latents, rng = self.model, self.latents, self.rng
        u = model.n_pairs
        if u == 0:
            return
        mean = model.mean_gamma(self.values)
        layout = model.layout
        sg = self.values[layout.index("sigma_gamma")]
        rg = self.values[layout.index("rho_gamma")]
        current = latents.gamma
        proposal = self.gamma_block.propose(rng, current)
        shift = proposal - current
        theta_new = self.theta + shift[model.resp_pair, model.resp_slot]
        ll_new = model.response_loglik(theta_new, self.deltas)
        gain = np.bincount(model.resp_pair, ll_new - self.resp_ll, minlength=u)
        if model.use_distal:
            proposed = LatentState(latents.alpha, latents.beta, proposal, latents.u)
            distal_new = model.distal_loglik(proposed, self.values)
            gain += np.bincount(model.distal_pair, distal_new - self.distal_ll, minlength=u)
        prior_new = _bvn(proposal[:, 0] - mean[:, 0], proposal[:, 1] - mean[:, 1], sg, sg, rg)
        prior_old = _bvn(current[:, 0] - mean[:, 0], current[:, 1] - mean[:, 1], sg, sg, rg)
        accepted = np.log(rng.random(u)) < gain + prior_new - prior_old
        self.gamma_block.record(None, accepted, iteration)
        latents.gamma = np.where(accepted[:, None], proposal, current)
        keep = accepted[model.resp_pair]
        self.theta = np.where(keep, theta_new, self.theta)
        self.resp_ll = np.where(keep, ll_new, self.resp_ll)
        if model.use_distal:
            self.distal_ll = np.where(accepted[model.distal_pair], distal_new, self.distal_ll)

    def _update_clusters(self, iteration: int) -> None:
        model, latents, rng = self.model, self.latents, self.rng
        assert self.u_block is not None  # noqa: S101
        assert model.resp_cluster is not None  # noqa: S101
        assert model.idx_sigma_u is not None  # noqa: S101
        j = model.n_clusters
        sigma = self.values[model.idx_sigma_u]
        current = latents.u
        proposal = self.u_block.propose(rng, current[:, None])[:, 0]
        theta_new = self.theta + (proposal - current)[model.resp_cluster]
        ll_new = model.response_loglik(theta_new, self.deltas)
        gain = np.bincount(model.resp_cluster, ll_new - self.resp_ll, minlength=j)
        gain += -0.5 * (proposal**2 - current**2) / sigma**2
        accepted = np.log(rng.random(j)) < gain
        self.u_block.record(None, accepted, iteration)
        latents.u = np.where(accepted, proposal, current)
        keep = accepted[model.resp_cluster]
        self.theta = np.where(keep, theta_new, self.theta)
        self.resp_ll = np.where(keep, ll_new, self.resp_ll)

    def _update_deltas(self, iteration: int) -> None:
        model, rng = self.model, self.rng
        assert self.delta_block is not None  # noqa: S101
        units = self.delta_units
        proposal = self.deltas.copy()
        proposal[units] = self.delta_block.propose(rng, self.deltas[units], units)
        ll_new = model.response_loglik(self.theta, proposal)
        gain = np.bincount(model.resp_item, ll_new - self.resp_ll, minlength=proposal.shape[0])
        accepted = np.log(rng.random(units.size)) < gain[units]
        self.delta_block.record(units, accepted, iteration)
        won = np.zeros(proposal.shape[0], dtype=bool)
        won[units[accepted]] = True
        self.deltas = np.where(won[:, None], proposal, self.deltas)
        keep = won[model.resp_item]
        self.resp_ll = np.where(keep, ll_new, self.resp_ll)
        layout = model.layout
        self.values[model.idx_delta] = self.deltas[layout.item_index, layout.step_index]

    def _block_target(self, group: str, values: np.ndarray, indices: np.ndarray) -> tuple[float, np.ndarray | None]:
        model = self.model
        if not model.in_support(values):
            return -math.inf, None
        distal_ll = None
        if group in {"individual_hyper", "individual_mean"}:
            total = float(np.sum(model.individual_prior(self.latents, values)))
        elif group in {"dyad_hyper", "dyad_mean"}:
            total = float(np.sum(model.pair_prior(self.latents, values)))
        elif group == "cluster_hyper":
            total = float(np.sum(model.cluster_prior(self.latents, values)))
        else:
            distal_ll = model.distal_loglik(self.latents, values)
            total = float(np.sum(distal_ll))
        return total + prior_log_jacobian(model, values, indices), distal_ll

    def _update_global(
        self, group: str, indices: np.ndarray, block: AdaptiveBlock, transform: _Transform, iteration: int
    ) -> None:
        z_current = transform.forward(self.values[indices])
        z_proposal = block.propose(self.rng, z_current[None, :])[0]
        natural, _ = transform.inverse(z_proposal)
        proposal = self.values.copy()
        proposal[indices] = natural
        target_new, distal_new = self._block_target(group, proposal, indices)
        target_old, _ = self._block_target(group, self.values, indices)
        accepted = bool(np.log(self.rng.random()) < target_new - target_old)
        block.record(None, np.array([accepted]), iteration)
        if accepted:
            self.values = proposal
            if distal_new is not None:
                self.distal_ll = distal_new

    # -- bookkeeping ----------------------------------------------------

    def log_density(self) -> float:
        model = self.model
        return float(
            np.sum(self.resp_ll)
            + np.sum(self.distal_ll)
            + np.sum(model.individual_prior(self.latents, self.values))
            + np.sum(model.pair_prior(self.latents, self.values))
            + np.sum(model.cluster_prior(self.latents, self.values))
        )

    def latent_vector(self) -> np.ndarray:
        latents = self.latents
        return np.concatenate([latents.alpha, latents.beta, latents.gamma.ravel(), latents.u])

    def acceptance(self) -> dict[str, float]:
        rates = {"individuals": self.individual_block.acceptance_rate, "gammas": self.gamma_block.acceptance_rate}
        if self.u_block is not None:
            rates["clusters"] = self.u_block.acceptance_rate
        if self.delta_block is not None:
            rates["items"] = self.delta_block.acceptance_rate
        for group, _, block, _ in self.global_blocks:
            rates[group] = block.acceptance_rate
        return rates


def _bvn(x1: np.ndarray, x2: np.ndarray, s1: float, s2: float, rho: float) -> np.ndarray:
    # constant terms cancel in every ratio
    z1 = x1 / s1
    z2 = x2 / s2
    return -0.5 * (z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2) / (1.0 - rho * rho)


def run_chain(
    model: DyadModel,
    config: McmcConfig,
    chain: int,
) -> ChainResult:
    """Run one chain from its own stream and return its retained draws."""
    sampler = ChainSampler(model, config, chain)
    free = model.layout.free
    n_keep = config.retained_per_chain
    draws = np.empty((n_keep, int(free.sum())))
    log_density = np.empty(n_keep)
    latent_size = sampler.latent_vector().size
    latent_mean = np.zeros(latent_size)
    latent_m2 = np.zeros(latent_size)
    latent_draws = np.empty((n_keep, latent_size)) if config.retain_latents else None

    kept = 0
    for iteration in range(config.iterations):
        sampler.step(iteration)
        if not config.is_retained(iteration):
            continue
        draws[kept] = sampler.values[free]
        log_density[kept] = sampler.log_density()
        vector = sampler.latent_vector()
        delta = vector - latent_mean
        latent_mean += delta / (kept + 1)
        latent_m2 += delta * (vector - latent_mean)
        if latent_draws is not None:
            latent_draws[kept] = vector
        kept += 1
    logger.debug("Chain %d done; acceptance %s", chain, sampler.acceptance())
    return ChainResult(
        chain=chain,
        draws=draws,
        log_density=log_density,
        acceptance=sampler.acceptance(),
        latent_mean=latent_mean,
        latent_m2=latent_m2,
        latent_count=kept,
        latent_draws=latent_draws,
    )
