"""Incentive-aware federated averaging with Nash-equilibrium participation."""

from incentfed.game import (
    ClassProfile,
    Coverage,
    Discovery,
    ParticipationGame,
    monotonicity_probe,
    ne_step,
    project_box,
    pseudo_gradient,
    solve_ne,
)
from incentfed.engine import FedConfig, RunTrace, aggregate, run, weights

__all__ = [
    "ClassProfile",
    "Coverage",
    "Discovery",
    "FedConfig",
    "ParticipationGame",
    "RunTrace",
    "aggregate",
    "monotonicity_probe",
    "ne_step",
    "project_box",
    "pseudo_gradient",
    "run",
    "solve_ne",
    "weights",
]

__version__ = "0.1.0"
