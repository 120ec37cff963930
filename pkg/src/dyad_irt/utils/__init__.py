from .parameter_filter import ParameterFilter
from .rng import chain_generator, replication_seed, simulation_generator, substream

__all__ = [
    "ParameterFilter",
    "chain_generator",
    "replication_seed",
    "simulation_generator",
    "substream",
]
