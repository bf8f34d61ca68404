"""Bifurcation and dynamics toolkit for a porous catalyst pellet model.

Reaction-diffusion pellet with lumped temperature, discretized by
symmetric orthogonal collocation.  The package computes steady-state
branches with limit-point and Hopf detection, two-parameter loci of
folds / Hopf points / homoclinic connections, periodic-orbit branches
with Floquet stability, and stiff time integration for phase portraits.
"""

from .collocation import (
    CollocationGrid,
    PelletState,
    build_grid,
    eta_average,
    jacobian,
    rhs,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    GridConstructionError,
    PelletDynError,
    StepSizeUnderflow,
)
from .model import ModelParams, modified_thiele, q_factor, reaction_rate, theta_from_z

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "CollocationGrid",
    "PelletState",
    "build_grid",
    "rhs",
    "jacobian",
    "eta_average",
    "reaction_rate",
    "theta_from_z",
    "modified_thiele",
    "q_factor",
    "PelletDynError",
    "ConvergenceError",
    "StepSizeUnderflow",
    "GridConstructionError",
    "ConfigError",
    "__version__",
]
