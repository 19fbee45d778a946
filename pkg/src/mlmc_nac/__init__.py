"""Average-reward natural actor-critic with multi-level Monte Carlo gradient estimates."""
from .actor_critic import (CriticState, HyperParams, RunTrace, critic_subroutine, derive_hyperparameters,
                           mlmc_nac, npg_subroutine)
from .backend import current_backend
from .mdp import FeatureMap, TabularMdp, Transition, generate_random_ergodic, make_rng
from .policy import PolicyClass

__all__ = [
    "CriticState", "FeatureMap", "HyperParams", "PolicyClass", "RunTrace", "TabularMdp", "Transition",
    "critic_subroutine", "current_backend", "derive_hyperparameters", "generate_random_ergodic",
    "make_rng", "mlmc_nac", "npg_subroutine",
]
__version__ = "0.1.0"
