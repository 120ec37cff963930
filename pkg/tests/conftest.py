"""Shared test fixtures and utilities."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from dyad_irt.density import DyadData
from dyad_irt.design import DyadDesign, make_round_robin
from dyad_irt.inference import McmcConfig
from dyad_irt.model import DistalCoefficients, Hyperparameters, ItemBank
from dyad_irt.simulate import DESK_DISTAL, DESK_HYPERPARAMETERS, SimulatedData, SimulationConfig, simulate


@pytest.fixture
def round_robin() -> DyadDesign:
    """Create a 4-person round-robin design fixture."""
    return make_round_robin(4)


@pytest.fixture
def simulated() -> SimulatedData:
    """Create a small simulated dataset with distal outcomes."""
    return create_simulated_data(distal=True)


@pytest.fixture
def fast_mcmc() -> McmcConfig:
    """Create a short two-chain sampler config."""
    return create_fast_mcmc()


def create_item_bank(n_items: int = 2, categories: int = 3) -> ItemBank:
    """Items with evenly spread steps, shifted apart per item."""
    steps = tuple(np.linspace(-1.0, 1.0, categories - 1).tolist()) if categories > 2 else (0.0,)
    offsets = tuple(np.linspace(-0.3, 0.3, n_items).tolist()) if n_items > 1 else (0.0,)
    return ItemBank.shifted(steps, offsets)


def create_simulated_data(
    design: DyadDesign | None = None,
    *,
    item_bank: ItemBank | None = None,
    hyper: Hyperparameters = DESK_HYPERPARAMETERS,
    distal: bool = False,
    seed: int = 1,
) -> SimulatedData:
    """
    Simulate one dataset.

    Args:
        design: Who rates whom. Default: a 6-person round robin.
        item_bank: Item steps. Default: 2 items with 3 categories.
        hyper: Generating hyperparameters.
        distal: Also simulate distal outcomes with the desk coefficients.
        seed: Simulation seed.

    Returns:
        The simulated dataset
    """
    config = SimulationConfig(
        design=design if design is not None else make_round_robin(6),
        item_bank=item_bank if item_bank is not None else create_item_bank(),
        hyper=hyper,
        distal=DistalCoefficients(np.array(DESK_DISTAL)) if distal else None,
        seed=seed,
    )
    return simulate(config)


def create_data(design: DyadDesign | None = None, *, distal: bool = False, seed: int = 1) -> DyadData:
    return create_simulated_data(design, distal=distal, seed=seed).to_data()


def create_fast_mcmc(
    *,
    chains: int = 2,
    iterations: int = 200,
    burn_in: int = 100,
    seed: int = 0,
    retain_latents: bool = False,
) -> McmcConfig:
    return McmcConfig(
        chains=chains,
        iterations=iterations,
        burn_in=burn_in,
        seed=seed,
        retain_latents=retain_latents,
        adaptation_window=25,
    )


def write_csv(path: Path, header: str, rows: list[str]) -> Path:
    """Write a small CSV file from a header line and data lines."""
    path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
    return path


def write_round_robin_edges(path: Path, n: int = 4) -> Path:
    ids = [f"p{i + 1}" for i in range(n)]
    rows = [f"{a},{p}" for a in ids for p in ids if a != p]
    return write_csv(path, "actor_id,partner_id", rows)
