"""Dyadic item response theory: measurement of actor, partner and dyad effects from round-robin ratings."""

from .design import DyadDesign, check_identification, make_block, make_k_group, make_round_robin
from .inference import McmcConfig, PosteriorDraws, eap_latent_scores, fit, summarize
from .model import Hyperparameters, ItemBank, pcm_category_probs, variance_partition
from .model_spec import DistalMode, ModelSpec
from .simulate import SimulationConfig, SimulationPlan, simulate
from .workflows import fit_joint, fit_sequential_mi

__version__ = "0.1.0"

__all__ = [
    "DistalMode",
    "DyadDesign",
    "Hyperparameters",
    "ItemBank",
    "McmcConfig",
    "ModelSpec",
    "PosteriorDraws",
    "SimulationConfig",
    "SimulationPlan",
    "check_identification",
    "eap_latent_scores",
    "fit",
    "fit_joint",
    "fit_sequential_mi",
    "make_block",
    "make_k_group",
    "make_round_robin",
    "pcm_category_probs",
    "simulate",
    "summarize",
    "variance_partition",
]
