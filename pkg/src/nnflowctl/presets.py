"""Named analytic forces and targets used by the CLI and the test suite."""

from __future__ import annotations

import numpy as np

from .control import ControlProblem, tight_config
from .exponent import ExponentField
from .grid import Grid, StaggeredField
from .state import SolverConfig, solve_state

__all__ = ["FORCES", "force", "recoverable_problem", "RECOVERABLE"]


def _zero(x, y):
    return np.zeros(np.broadcast(x, y).shape)


def _vortex(amp):
    return (lambda x, y: amp * np.sin(np.pi * x) * np.sin(2 * np.pi * y),
            lambda x, y: amp * np.sin(2 * np.pi * x) * np.sin(np.pi * y))


def _shear(amp):
    return (lambda x, y: amp * np.sin(np.pi * x) * np.sin(np.pi * y), _zero)


FORCES = {
    "zero": (_zero, _zero),
    "vortex": _vortex(20.0),
    "shear": _shear(5.0),
}

# canonical recoverable-target experiment
RECOVERABLE = {"n": 32, "alpha": 1.8, "force": "vortex", "reg_nu": 1e-6, "max_iter": 60,
               "grad_tol": 1e-10}


def force(name: str, g: Grid, scale: float = 1.0) -> StaggeredField:
    if name not in FORCES:
        raise KeyError(f"unknown force preset {name!r}; choose from {sorted(FORCES)}")
    fu, fv = FORCES[name]
    return (StaggeredField.from_functions(g, fu, fv) * scale).with_dirichlet()


def recoverable_problem(n: int = RECOVERABLE["n"], alpha: float = RECOVERABLE["alpha"],
                        reg_nu: float = RECOVERABLE["reg_nu"], force_name: str = "vortex",
                        cfg: SolverConfig | None = None):
    """Target ``y_d = y(u_dagger)`` from a forward solve; returns ``(problem, u_dagger)``.

    Solves use Newton at a tight tolerance so that line-search comparisons
    are not limited by the state residual.
    """
    g = Grid.unit_square(n)
    field = ExponentField.constant(alpha)
    cfg = tight_config(cfg or SolverConfig())
    u_dag = force(force_name, g)
    y_d = solve_state(u_dag, field, g, cfg).y
    return ControlProblem(y_d, reg_nu, field, g, cfg), u_dag
