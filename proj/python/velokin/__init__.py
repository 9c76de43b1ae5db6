"""Bayesian transcriptional kinetics and RNA velocity (C++ core)."""

from ._core import (
    DatasetError,
    Hyperparameters,
    ModelState,
    Posterior,
    RateParams,
    derive_subgroups,
    fit,
    gillespie,
    project,
    read_posterior,
    simulate,
    solve,
    summarize,
    waic,
)

__all__ = [
    "DatasetError",
    "Hyperparameters",
    "ModelState",
    "Posterior",
    "RateParams",
    "derive_subgroups",
    "fit",
    "gillespie",
    "project",
    "read_posterior",
    "simulate",
    "solve",
    "summarize",
    "waic",
]
