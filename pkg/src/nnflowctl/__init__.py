"""Optimal control of stationary generalized Navier-Stokes flow with a
variable-exponent shear-dependent viscosity on a MAC grid."""

from .control import ControlProblem, OptimizationTrace, evaluate_J, gradient_J, optimize
from .exponent import ExponentField
from .grid import Grid, StaggeredField
from .state import SolverConfig, StateSolution, solve_state
from .tensor import SymMatrix, TensorConstants, potential, stress, stress_jacobian

__version__ = "0.1.0"

__all__ = [
    "ControlProblem",
    "OptimizationTrace",
    "evaluate_J",
    "gradient_J",
    "optimize",
    "ExponentField",
    "Grid",
    "StaggeredField",
    "SolverConfig",
    "StateSolution",
    "solve_state",
    "SymMatrix",
    "TensorConstants",
    "potential",
    "stress",
    "stress_jacobian",
]
