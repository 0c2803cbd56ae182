"""Zero-sum stochastic differential games with long-run average payoff.

Monotone grid solvers for the ergodic HJBI pair (rho, w) via vanishing
discount, near-optimal theta-frozen feedback synthesis, sup/inf-convolution
smoothing diagnostics, and reproducible Monte Carlo verification of the
moment, density, and convergence estimates, with a worked robust
pollution-control application.
"""

from ._kernels import BACKEND, HAVE_COMPILED
from .ergodic import ErgodicSolution, vanishing_discount
from .grids import GridFunction, StateGrid
from .model import (
    ControlGrid,
    ProblemSpec,
    estimate_dissipativity,
    make_spec,
    validate_assumptions,
)
from .simulate import SimConfig, simulate
from .solver import solve_discounted, solve_parabolic

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "HAVE_COMPILED",
    "ControlGrid",
    "ErgodicSolution",
    "GridFunction",
    "ProblemSpec",
    "SimConfig",
    "StateGrid",
    "estimate_dissipativity",
    "make_spec",
    "simulate",
    "solve_discounted",
    "solve_parabolic",
    "validate_assumptions",
    "vanishing_discount",
]
