"""Tracking-type distributed control of the generalized Navier-Stokes state.

The cost is ``J(u) = 1/2 ||y_u - y_d||^2 + reg_nu/2 ||u||^2`` in the face
weighted discrete L2 product. Controls live on the interior faces (the wall
normal components do not act on the flow and are kept at zero).

Gradients come from the exact discrete adjoint of the converged state, so
``dJ(u)[d] == inner_product(gradient_J(u), d)`` up to solver tolerance.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spla

from .exponent import ExponentField
from .grid import Grid, StaggeredField, inner_product, l2_norm, operators
from .state import (
    LinearSolverError,
    SolverConfig,
    SolverDivergenceError,
    StateSolution,
    _solve_linear,
    solve_state,
    state_jacobian,
)

log = logging.getLogger(__name__)

__all__ = [
    "ControlProblem",
    "OptimizationTrace",
    "OptimizationError",
    "AdjointError",
    "evaluate_J",
    "gradient_J",
    "optimize",
    "check_gradient",
    "continuity_ladder",
    "tight_config",
]

ARMIJO_C = 1e-4


@dataclass(frozen=True)
class ControlProblem:
    y_d: StaggeredField
    reg_nu: float
    field: ExponentField
    g: Grid
    solver_cfg: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not self.reg_nu > 0.0:
            raise ValueError(f"reg_nu must be positive, got {self.reg_nu}")
        if self.y_d.shape != (self.g.u_shape, self.g.v_shape):
            raise ValueError("target does not match the grid")
        if not np.all(np.isfinite(self.y_d.flat)):
            raise ValueError("target y_d must be finite")


class AdjointError(LinearSolverError):
    pass


class OptimizationError(RuntimeError):
    def __init__(self, message, trace: "OptimizationTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass
class OptimizationTrace:
    """Per-iteration record of the minimizing sequence."""

    J: list = field(default_factory=list)
    u_norm: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    step: list = field(default_factory=list)
    tracking: list = field(default_factory=list)
    state_solves: int = 0
    status: str = "running"

    def record(self, J, u_norm, grad_norm, step, tracking):
        self.J.append(float(J))
        self.u_norm.append(float(u_norm))
        self.grad_norm.append(float(grad_norm))
        self.step.append(float(step))
        self.tracking.append(float(tracking))

    def __len__(self):
        return len(self.J)

    def monotone(self) -> bool:
        return all(b <= a for a, b in zip(self.J, self.J[1:]))

    def bounded(self, reg_nu: float) -> bool:
        """``reg_nu/2 ||u_k||^2 <= J_0`` at every recorded iterate."""
        J0 = self.J[0]
        return all(0.5 * reg_nu * n * n <= J0 * (1.0 + 1e-12) + 1e-300 for n in self.u_norm)

    def rows(self):
        for k in range(len(self)):
            yield {"iteration": k, "J": self.J[k], "u_norm": self.u_norm[k],
                   "grad_norm": self.grad_norm[k], "step": self.step[k],
                   "tracking": self.tracking[k]}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "J", "u_norm", "grad_norm", "step", "tracking"])
            for r in self.rows():
                w.writerow([r["iteration"]] + [f"{r[k]:.17g}" for k in
                                              ("J", "u_norm", "grad_norm", "step", "tracking")])


def _tracking(sol: StateSolution, prob: ControlProblem) -> float:
    e = sol.y - prob.y_d
    return 0.5 * inner_product(e, e, prob.g)


def evaluate_J(u: StaggeredField, prob: ControlProblem, y0: Optional[StaggeredField] = None):
    """Return ``(J(u), state solution)``; solver failures propagate."""
    u = u.with_dirichlet()
    sol = solve_state(u, prob.field, prob.g, prob.solver_cfg, y0=y0)
    J = _tracking(sol, prob) + 0.5 * prob.reg_nu * inner_product(u, u, prob.g)
    return J, sol


def gradient_J(u: StaggeredField, prob: ControlProblem,
               sol: Optional[StateSolution] = None) -> StaggeredField:
    """Adjoint gradient of ``J`` at ``u`` with respect to the discrete L2 product.

    Pass the converged ``sol`` at ``u`` to skip the state solve.
    """
    g = prob.g
    u = u.with_dirichlet()
    if sol is None:
        _, sol = evaluate_J(u, prob)
    ops = operators(g)
    F = ops.free_idx
    w = ops.face_w[F]
    M = state_jacobian(sol.y, prob.field, g)
    rhs = np.zeros(M.shape[0])
    rhs[:len(F)] = w * (sol.y - prob.y_d).flat[F]
    try:
        lam, _ = _solve_linear(M, rhs, prob.solver_cfg.linear_tol, transpose=True)
    except LinearSolverError as exc:
        try:
            cond = spla.onenormest(M)
        except Exception:  # pragma: no cover - diagnostic only
            cond = float("nan")
        raise AdjointError(f"adjoint solve failed ({exc}); ||M||_1 ~ {cond:.3e}") from exc
    grad = prob.reg_nu * u.flat
    grad[F] += lam[:len(F)] / w
    return StaggeredField.from_flat(g, grad).with_dirichlet()


def _lbfgs_direction(grad: np.ndarray, S: list, Y: list, w: np.ndarray) -> np.ndarray:
    dot = lambda a, b: float(np.dot(w * a, b))  # noqa: E731
    q = grad.copy()
    alphas = []
    for s, y in reversed(list(zip(S, Y))):
        rho = 1.0 / dot(y, s)
        a = rho * dot(s, q)
        alphas.append((a, rho, s, y))
        q -= a * y
    if S:
        q *= dot(S[-1], Y[-1]) / dot(Y[-1], Y[-1])
    for a, rho, s, y in reversed(alphas):
        b = rho * dot(y, q)
        q += (a - b) * s
    return -q


def optimize(u0: StaggeredField, prob: ControlProblem, max_iter: int = 100,
             grad_tol: float = 1e-8, memory: int = 8, max_halvings: int = 30):
    """Minimize ``J`` by L-BFGS with Armijo backtracking from ``u0``.

    Returns ``(u_star, trace)``. Every accepted step satisfies sufficient
    decrease, so ``trace.J`` is nonincreasing. A state solve that fails at a
    trial point rejects the step and halves it; running out of halvings
    raises :class:`OptimizationError` carrying the trace.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    g = prob.g
    ops = operators(g)
    w = ops.face_w
    u = u0.with_dirichlet()
    if not np.all(np.isfinite(u.flat)):
        raise ValueError("initial control must be finite")
    trace = OptimizationTrace()
    J, sol = evaluate_J(u, prob)
    trace.state_solves += 1
    grad = gradient_J(u, prob, sol)
    gnorm = l2_norm(grad, g)
    trace.record(J, l2_norm(u, g), gnorm, 0.0, _tracking(sol, prob))
    S, Y = [], []
    for _ in range(max_iter):
        if gnorm <= grad_tol:
            trace.status = "converged"
            return u, trace
        gv = grad.flat
        d = _lbfgs_direction(gv, S, Y, w)
        slope = float(np.dot(w * gv, d))
        if not slope < 0.0:
            S.clear()
            Y.clear()
            d = -gv
            slope = float(np.dot(w * gv, d))
        # the unscaled first step is taken as ||u|| / ||grad|| capped at 1
        t = 1.0 if S else min(1.0, max(l2_norm(u, g), 1.0) / max(gnorm, 1e-300))
        accepted = None
        failures = 0
        for _ in range(max_halvings):
            trial = StaggeredField.from_flat(g, u.flat + t * d).with_dirichlet()
            try:
                Jt, solt = evaluate_J(trial, prob, y0=sol.y)
                trace.state_solves += 1
            except (SolverDivergenceError, LinearSolverError) as exc:
                log.info("state solve failed at step %g (%s); halving", t, exc)
                failures += 1
                t *= 0.5
                continue
            if Jt <= J + ARMIJO_C * t * slope:
                accepted = (trial, Jt, solt)
                break
            t *= 0.5
        if accepted is None:
            if failures == max_halvings:
                trace.status = "state_failure"
                raise OptimizationError("state solve failed at every trial step", trace)
            # no sufficient decrease down to the last halving: precision floor
            trace.status = "stalled"
            return u, trace
        trial, Jt, solt = accepted
        grad_new = gradient_J(trial, prob, solt)
        s_vec = trial.flat - u.flat
        y_vec = grad_new.flat - gv
        if float(np.dot(w * s_vec, y_vec)) > 1e-12 * float(np.dot(w * s_vec, s_vec)):
            S.append(s_vec)
            Y.append(y_vec)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        u, J, sol, grad = trial, Jt, solt, grad_new
        gnorm = l2_norm(grad, g)
        trace.record(J, l2_norm(u, g), gnorm, t, _tracking(sol, prob))
    trace.status = "converged" if gnorm <= grad_tol else "max_iter"
    return u, trace


def _random_control(g: Grid, rng: np.random.Generator) -> StaggeredField:
    f = StaggeredField(rng.standard_normal(g.u_shape), rng.standard_normal(g.v_shape))
    f = f.with_dirichlet()
    return f * (1.0 / l2_norm(f, g))


def check_gradient(u: StaggeredField, prob: ControlProblem, directions: int = 10,
                   eps: float = 1e-5, seed: int = 0) -> list:
    """Compare the adjoint gradient with central differences along random directions.

    Returns one dict per direction with the FD slope, the adjoint slope and
    their relative error ``|fd - ad| / max(|fd|, |ad|, 1e-300)``.
    """
    g = prob.g
    rng = np.random.default_rng(seed)
    J0, sol = evaluate_J(u, prob)
    grad = gradient_J(u, prob, sol)
    out = []
    for _ in range(directions):
        d = _random_control(g, rng)
        Jp, _ = evaluate_J(u + d * eps, prob, y0=sol.y)
        Jm, _ = evaluate_J(u - d * eps, prob, y0=sol.y)
        fd = (Jp - Jm) / (2.0 * eps)
        ad = inner_product(grad, d, g)
        out.append({"fd": fd, "adjoint": ad,
                    "rel_error": abs(fd - ad) / max(abs(fd), abs(ad), 1e-300)})
    return out


def continuity_ladder(u: StaggeredField, prob: ControlProblem, rungs: int = 6,
                      seed: int = 0) -> list:
    """``|J(u + 10^-k d) - J(u)|`` for ``k = 0..rungs-1`` and a random unit ``d``."""
    rng = np.random.default_rng(seed)
    d = _random_control(prob.g, rng)
    J0, sol = evaluate_J(u, prob)
    res = []
    for k in range(rungs):
        delta = 10.0 ** (-k)
        Jk, _ = evaluate_J(u + d * delta, prob, y0=sol.y)
        res.append((delta, abs(Jk - J0)))
    return res


def tight_config(cfg: SolverConfig) -> SolverConfig:
    """Newton mode at a tight tolerance, for finite-difference comparisons."""
    return replace(cfg, method="newton", picard_tol=min(cfg.picard_tol, 1e-12))
