"""Learned safety assessment for closed-loop tracking systems."""

from ._saveri import (
    IncompatibleError,
    InputError,
    InsufficientDataError,
    Model,
    NumericalError,
    available_systems,
    bba_from_feedback,
    bba_from_training,
    combine_estimates,
    dtw,
    fuse_beliefs,
    fuse_feedback,
    generate_episodes,
)

__all__ = [
    "IncompatibleError",
    "InputError",
    "InsufficientDataError",
    "Model",
    "NumericalError",
    "available_systems",
    "bba_from_feedback",
    "bba_from_training",
    "combine_estimates",
    "dtw",
    "fuse_beliefs",
    "fuse_feedback",
    "generate_episodes",
]
