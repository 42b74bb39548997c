"""Stationary generalized Navier-Stokes solve for a given body force.

The discrete problem on the MAC grid reads::

    -div_h S(D_h y) + c_h(y, y) + grad_h p = u,    div_h y = 0,    mean(p) = 0

with the skew-symmetric convection ``c_h`` and the stress law of
:mod:`nnflowctl.tensor`. The default nonlinear iteration freezes the effective
viscosity ``(1 + |D y^k|)^(alpha - 2)`` and the convecting velocity ``y^k`` and
solves the resulting Oseen saddle-point problem (Picard / Kacanov). A Newton
mode built on the analytic stress derivative is available for tight solves.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from . import tensor
from .exponent import ExponentField, holder_exponent_for
from .grid import (
    Grid,
    StaggeredField,
    estimate_poincare_korn,
    h1_norm,
    inner_product,
    l2_norm,
    lq_norm,
    operators,
    sym_grad_norm,
)

log = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "StateSolution",
    "SolverDivergenceError",
    "LinearSolverError",
    "residual",
    "solve_state",
    "energy_identity_check",
    "energy_constant",
    "state_jacobian",
]

# basis of symmetric 2x2 matrices matching the (d11, d22, d12) strain layout
_BASIS = np.array([[[1.0, 0.0], [0.0, 0.0]],
                   [[0.0, 0.0], [0.0, 1.0]],
                   [[0.0, 1.0], [1.0, 0.0]]])


@dataclass(frozen=True)
class SolverConfig:
    picard_tol: float = 1e-9
    picard_max_iter: int = 200
    linear_tol: float = 1e-11
    under_relaxation: float = 1.0
    smallness_q: float = 4.0
    smallness_threshold: float = 10.0
    method: str = "picard"
    viscosity_floor: float = 1e-12
    korn_trials: int = 4

    def __post_init__(self):
        if not (self.picard_tol > 0 and self.linear_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.picard_max_iter < 1:
            raise ValueError("picard_max_iter must be >= 1")
        if not 0.0 < self.under_relaxation <= 1.0:
            raise ValueError("under_relaxation must lie in (0, 1]")
        if not self.smallness_q > 2.0:
            raise ValueError("smallness_q must exceed the dimension 2")
        if self.method not in ("picard", "newton"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class StateSolution:
    y: StaggeredField
    p: np.ndarray
    residual_norm: float
    iterations: int
    energy_lhs: float
    energy_rhs_bound: float
    smallness_warning: bool
    converged: bool = True
    increment_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    energy_gap: float = float("nan")
    c8_hat: float = float("nan")
    control_lq_norm: float = float("nan")
    holder_exponent: float = float("nan")
    clamped_points: int = 0
    relaxation: float = 1.0
    max_divergence: float = 0.0

    def diagnostics(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "residual_history": list(self.residual_history),
            "increment_history": list(self.increment_history),
            "max_divergence": self.max_divergence,
            "energy_lhs": self.energy_lhs,
            "energy_rhs_bound": self.energy_rhs_bound,
            "energy_estimate_holds": bool(self.energy_lhs <= self.energy_rhs_bound + 1e-8),
            "c8_hat": self.c8_hat,
            "energy_identity_gap": self.energy_gap,
            "smallness_warning": self.smallness_warning,
            "control_lq_norm": self.control_lq_norm,
            "holder_exponent": self.holder_exponent,
            "clamped_points": self.clamped_points,
            "final_relaxation": self.relaxation,
        }


class SolverDivergenceError(RuntimeError):
    """Nonlinear iteration hit ``picard_max_iter``; carries the history and last iterate."""

    def __init__(self, message, history=None, solution: Optional[StateSolution] = None):
        super().__init__(message)
        self.history = list(history or [])
        self.solution = solution


class LinearSolverError(RuntimeError):
    pass


def _alpha_points(field: ExponentField, g: Grid) -> np.ndarray:
    """Exponent at cell centres broadcast over the four quadrant points, ``(4, nx, ny)``."""
    xc, yc = g.centers()
    return np.broadcast_to(field(xc, yc), (4, g.nx, g.ny))


def _strain_tensors(y: np.ndarray, g: Grid) -> np.ndarray:
    d = operators(g).sym_grad_vec(y)                  # (3, 4, nx, ny)
    a = np.empty(d.shape[1:] + (2, 2))
    a[..., 0, 0] = d[0]
    a[..., 1, 1] = d[1]
    a[..., 0, 1] = a[..., 1, 0] = d[2]
    return a


def _stress_force(y: np.ndarray, alpha: np.ndarray, g: Grid) -> np.ndarray:
    """``div_h S(D_h y)`` as a full face vector."""
    S = tensor.stress(_strain_tensors(y, g), alpha)
    return operators(g).div_stress_vec(S[..., 0, 0], S[..., 1, 1], S[..., 0, 1])


def _momentum(y, p, u, alpha, g) -> np.ndarray:
    ops = operators(g)
    r = _stress_force(y, alpha, g) - ops.convect_vec(y, y) + ops.div.T @ p.ravel() + u
    r[~ops.free] = 0.0
    return r


def residual(y: StaggeredField, p: np.ndarray, u: StaggeredField, field: ExponentField,
             g: Grid):
    """Momentum and mass residuals; both vanish at a discrete solution.

    ``momentum = div S(Dy) - y.grad y - grad p + u`` on interior faces and
    ``mass = div y`` at cell centres.
    """
    alpha = _alpha_points(field, g)
    mom = _momentum(y.flat, np.asarray(p, float), u.with_dirichlet().flat, alpha, g)
    mass = (operators(g).div @ y.flat).reshape(g.cell_shape)
    return StaggeredField.from_flat(g, mom), mass


def _picard_blocks(y, alpha, g, floor):
    D = _strain_tensors(y, g)
    visc = (1.0 + tensor.frobenius(D)) ** (alpha - 2.0)
    clamped = int(np.count_nonzero(visc < floor))
    visc = np.maximum(visc, floor)
    blocks = np.zeros(visc.shape + (3, 3))
    blocks[..., 0, 0] = visc
    blocks[..., 1, 1] = visc
    blocks[..., 2, 2] = 2.0 * visc
    return blocks, clamped


def _tangent_blocks(y, alpha, g):
    J = tensor.stress_jacobian(_strain_tensors(y, g), alpha)
    return np.einsum("rkl,...ijkl,cij->...rc", _BASIS, J, _BASIS)


def _saddle(A_free: sps.spmatrix, g: Grid) -> sps.csc_matrix:
    ops = operators(g)
    F = ops.free_idx
    divF = ops.div[:, F]
    ones = np.ones((g.n_cells, 1))
    return sps.bmat([[A_free, -divF.T, None],
                     [-divF, None, sps.csr_matrix(ones)],
                     [None, sps.csr_matrix(ones.T), None]], format="csc")


def state_jacobian(y: StaggeredField, field: ExponentField, g: Grid) -> sps.csc_matrix:
    """Bordered Jacobian of ``(y, p, mu) -> (-momentum, -div y + mu, mean p)`` on free dofs.

    Built from the analytic stress derivative and both convection
    linearizations; the control enters the momentum residual with identity.
    """
    ops = operators(g)
    F = ops.free_idx
    yv = y.flat
    alpha = _alpha_points(field, g)
    A = (ops.viscous_matrix(_tangent_blocks(yv, alpha, g))
         + ops.convection_matrix(yv) + ops.convection_matrix_first(yv))
    return _saddle(A[F][:, F], g)


def _solve_linear(M: sps.csc_matrix, rhs: np.ndarray, tol: float, transpose: bool = False):
    """Solve the bordered saddle system ``M x = rhs`` (or ``M^T x = rhs``).

    The factorization works on a reduced system with the last pressure
    pinned, which has far less fill than the bordered one. The multiplier
    follows from the summed mass rows and the pressure gauge is restored
    afterwards; the residual is always measured on the full system.
    """
    op = (M.T if transpose else M).tocsc()
    n = op.shape[0]
    nc = op[n - 1].nnz                      # the mean row touches every cell
    nv = n - 1 - nc
    keep = np.r_[0:n - 2]
    try:
        lu = spla.splu(op[keep][:, keep].tocsc(), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise LinearSolverError(f"saddle-point factorization failed: {exc}") from exc

    def apply(b):
        mu = b[nv:nv + nc].sum() / nc
        red = b[keep].copy()
        red[nv:] -= mu
        z = lu.solve(red)
        x = np.zeros(n)
        x[keep] = z
        x[nv:nv + nc] += (b[n - 1] - x[nv:nv + nc].sum()) / nc
        x[n - 1] = mu
        return x

    x = apply(rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    rel = np.linalg.norm(op @ x - rhs) / scale
    for _ in range(3):
        if rel <= tol or not np.isfinite(rel):
            break
        x = x + apply(rhs - op @ x)
        rel = np.linalg.norm(op @ x - rhs) / scale
    if not np.isfinite(rel) or rel > tol:
        raise LinearSolverError(f"linear solve reached relative residual {rel:.3e} > {tol:.1e}")
    return x, rel


def energy_constant(y: StaggeredField, field: ExponentField, g: Grid, trials: int = 4) -> float:
    """Discrete constant ``C8_hat`` with ``||D y|| <= C8_hat ||u||`` at a solution.

    ``C1_hat / C2_hat`` bounds ``||y|| / ||D y||``; the coercivity factor uses
    the constants' shear-thinning branch at points with ``alpha < 2``.
    """
    c1, c2 = estimate_poincare_korn(g, trials)
    consts = field.constants
    alpha = _alpha_points(field, g)
    r = tensor.frobenius(_strain_tensors(y.flat, g))
    kappa = np.where(alpha < 2.0, consts.nu_mono * (1.0 + r) ** (alpha - 2.0), consts.nu_thick)
    return c1 / (c2 * float(kappa.min()))


def _finish(y, p, u, field, g, cfg, *, converged, iters, res_hist, inc_hist, clamped,
            relaxed, omega) -> StateSolution:
    yf = StaggeredField.from_flat(g, y)
    gap = _energy_gap(y, u, _alpha_points(field, g), g)
    c8 = energy_constant(yf, field, g, cfg.korn_trials)
    unorm = l2_norm(u, g)
    lq = lq_norm(u, g, cfg.smallness_q)
    warn = bool(relaxed or lq > cfg.smallness_threshold)
    if warn and converged:
        log.warning("forcing outside the small-data regime (||u||_%g = %.3g, relaxed=%s)",
                    cfg.smallness_q, lq, relaxed)
    return StateSolution(
        y=yf, p=p.reshape(g.cell_shape), residual_norm=res_hist[-1] if res_hist else 0.0,
        iterations=iters, energy_lhs=sym_grad_norm(yf, g), energy_rhs_bound=c8 * unorm,
        smallness_warning=warn, converged=converged, increment_history=inc_hist,
        residual_history=res_hist, energy_gap=gap, c8_hat=c8, control_lq_norm=lq,
        holder_exponent=holder_exponent_for(cfg.smallness_q, 2), clamped_points=clamped,
        relaxation=omega, max_divergence=float(np.abs(operators(g).div @ y).max()),
    )


def solve_state(u: StaggeredField, field: ExponentField, g: Grid,
                cfg: SolverConfig | None = None, y0: StaggeredField | None = None,
                p0: np.ndarray | None = None) -> StateSolution:
    """Solve the discrete state equation for the body force ``u``.

    Starts from the rest state unless ``y0`` is given. Stops when both the
    W^{1,2} increment and the relative momentum residual
    ``||momentum|| / max(1, ||u||)`` drop below ``cfg.picard_tol``.

    Raises:
        SolverDivergenceError: no convergence within ``picard_max_iter``.
        LinearSolverError: the saddle-point core failed its tolerance.
    """
    cfg = cfg or SolverConfig()
    u = u.with_dirichlet()
    if not np.all(np.isfinite(u.flat)):
        raise ValueError("control must be finite")
    ops = operators(g)
    F = ops.free_idx
    nf = len(F)
    alpha = _alpha_points(field, g)
    uvec = u.flat
    scale = max(1.0, l2_norm(u, g))

    y = np.zeros(g.n_vel) if y0 is None else y0.with_dirichlet().flat.copy()
    p = np.zeros(g.n_cells) if p0 is None else np.asarray(p0, float).ravel().copy()
    omega = cfg.under_relaxation
    relaxed = False
    res_hist, inc_hist = [], []
    clamped = 0

    def res_norm(yv, pv):
        r = _momentum(yv, pv, uvec, alpha, g)
        return float(np.sqrt(np.dot(ops.face_w * r, r))) / scale, r

    prev, r = res_norm(y, p)
    for k in range(1, cfg.picard_max_iter + 1):
        if cfg.method == "picard":
            blocks, clamped = _picard_blocks(y, alpha, g, cfg.viscosity_floor)
            A = ops.viscous_matrix(blocks) + ops.convection_matrix(y)
            rhs = np.concatenate([uvec[F], np.zeros(g.n_cells + 1)])
            sol, _ = _solve_linear(_saddle(A[F][:, F], g), rhs, cfg.linear_tol)
            y_new = np.zeros(g.n_vel)
            y_new[F] = sol[:nf]
            step_y = y_new - y
            step_p = sol[nf:nf + g.n_cells] - p
        else:
            M = state_jacobian(StaggeredField.from_flat(g, y), field, g)
            rhs = np.concatenate([r[F], ops.div @ y, [-p.sum()]])
            sol, _ = _solve_linear(M, rhs, cfg.linear_tol)
            step_y = np.zeros(g.n_vel)
            step_y[F] = sol[:nf]
            step_p = sol[nf:nf + g.n_cells]
        if cfg.method == "newton":
            # damped Newton: backtrack from the full step on the residual
            omega = 1.0
            while True:
                y_try = y + omega * step_y
                p_try = p + omega * step_p
                p_try -= p_try.mean()
                cur, r = res_norm(y_try, p_try)
                if cur < prev or cur <= 10.0 * cfg.picard_tol or omega <= 1.0 / 64.0:
                    break
                omega *= 0.5
                relaxed = True
            y, p = y_try, p_try
        else:
            y = y + omega * step_y
            p = p + omega * step_p
            p -= p.mean()
        div_max = float(np.abs(ops.div @ y).max())
        if div_max > 1e-10 * max(1.0, np.abs(y).max() / g.h):
            raise LinearSolverError(f"iterate is not divergence free (max |div y| = {div_max:.3e})")
        inc = h1_norm(StaggeredField.from_flat(g, omega * step_y), g)
        if cfg.method == "picard":
            cur, r = res_norm(y, p)
        inc_hist.append(inc)
        res_hist.append(cur)
        if cfg.method == "picard" and cur > prev and cur > 10.0 * cfg.picard_tol and omega > 1.0 / 64.0:
            omega *= 0.5
            relaxed = True
            log.info("residual grew %.3e -> %.3e; under-relaxation now %g", prev, cur, omega)
        prev = cur
        if inc < cfg.picard_tol and cur <= cfg.picard_tol:
            return _finish(y, p, u, field, g, cfg, converged=True, iters=k, res_hist=res_hist,
                           inc_hist=inc_hist, clamped=clamped, relaxed=relaxed, omega=omega)
    partial = _finish(y, p, u, field, g, cfg, converged=False, iters=cfg.picard_max_iter,
                      res_hist=res_hist, inc_hist=inc_hist, clamped=clamped, relaxed=relaxed,
                      omega=omega)
    raise SolverDivergenceError(
        f"nonlinear iteration did not converge in {cfg.picard_max_iter} steps "
        f"(residual {res_hist[-1]:.3e}, increment {inc_hist[-1]:.3e})",
        history=res_hist, solution=partial)


def _energy_gap(y: np.ndarray, u: StaggeredField, alpha: np.ndarray, g: Grid) -> float:
    D = _strain_tensors(y, g)
    work = 0.25 * g.h ** 2 * float(np.sum(tensor.stress(D, alpha) * D))
    power = inner_product(u.with_dirichlet(), StaggeredField.from_flat(g, y), g)
    return abs(work - power) / max(1.0, abs(power))


def energy_identity_check(sol: StateSolution, u: StaggeredField, field: ExponentField,
                          g: Grid) -> float:
    """Relative gap ``|(S(Dy), Dy) - (u, y)| / max(1, |(u, y)|)``."""
    return _energy_gap(sol.y.flat, u, _alpha_points(field, g), g)


def with_method(cfg: SolverConfig, **changes) -> SolverConfig:
    return replace(cfg, **changes)
