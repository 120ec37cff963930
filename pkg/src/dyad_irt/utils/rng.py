"""
Random streams.

Every generator is a PCG64 seeded from ``SeedSequence(seed, spawn_key=key)``.
Stream keys:

- ``(SIMULATION,)``: data generation for one simulated dataset.
- ``(CHAIN, c)``: MCMC chain ``c``.
- ``(REPLICATION, r)``: seed of replication ``r`` in a recovery study; the
  replication then runs its own simulation and chain streams from that seed.

Two streams with different keys never overlap, and a stream depends only on
``(seed, key)``, so worker count and scheduling order do not change results.
"""

from __future__ import annotations

import numpy as np

SIMULATION = 0
CHAIN = 1
REPLICATION = 2


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def chain_generator(seed: int, chain: int) -> np.random.Generator:
    return substream(seed, CHAIN, chain)


def simulation_generator(seed: int) -> np.random.Generator:
    return substream(seed, SIMULATION)


def replication_seed(master_seed: int, replication: int) -> int:
    """Derive the integer seed persisted for one replication."""
    sequence = np.random.SeedSequence(master_seed, spawn_key=(REPLICATION, replication))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def covariate_generator(seed: int) -> np.random.Generator:
    """Covariate columns of a simulated dataset, apart from the response stream."""
    return substream(seed, SIMULATION, 1)
