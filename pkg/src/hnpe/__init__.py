"""Hierarchical neural posterior estimation for simulators with global parameters.

A likelihood-free inference toolkit for hierarchical simulator models in
which several observations share a global parameter. It combines a
factorized pair of conditional normalizing flows with a permutation
invariant set aggregator, multi-round training, closed-form posterior
oracles for validation, and Sinkhorn-divergence diagnostics.
"""

__version__ = "0.1.0"

from .core import (
    ObservationBundle,
    PriorSpec,
    SimulatedDataset,
    Theta,
    concatenate_datasets,
    prior_log_density,
    sample_prior,
    spawn_rngs,
)

__all__ = [
    "ObservationBundle",
    "PriorSpec",
    "SimulatedDataset",
    "Theta",
    "concatenate_datasets",
    "prior_log_density",
    "sample_prior",
    "spawn_rngs",
    "__version__",
]
