"""Manufactured solutions, refinement studies and inequality campaigns."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
import sympy as sp

from . import _expr, tensor
from .exponent import ExponentField
from .grid import (
    Grid,
    StaggeredField,
    SymTensorField,
    convect,
    discrete_stream_field,
    div_stress,
    divergence,
    inner_product,
    l2_norm,
    sym_grad_norm,
    sym_gradient,
    tensor_inner_product,
)
from .state import SolverConfig, solve_state
from .tensor import TensorConstants

__all__ = [
    "ManufacturedCase",
    "MMS_CASES",
    "manufacture",
    "convergence_study",
    "campaign_margins",
    "inequality_campaign",
    "negative_controls",
    "jacobian_consistency",
    "structural_identities",
]

QUARTIC = "x1**2*(1 - x1)**2*x2**2*(1 - x2)**2"
X1, X2 = _expr.X1, _expr.X2


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact solution ``y* = (d psi/dx2, -d psi/dx1)``, ``p*`` and exponent field.

    ``psi`` must have a vanishing gradient on the boundary of the unit
    square and ``pressure`` should have zero mean.
    """

    psi: str
    alpha: ExponentField
    pressure: str = "cos(pi*x1)*cos(pi*x2)"
    amplitude: float = 1.0
    name: str = "custom"
    _fns: dict = dc_field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_fns", _derive(self))

    def velocity(self, x1, x2):
        f = self._fns
        return f["y1"](x1, x2), f["y2"](x1, x2)

    def pressure_at(self, x1, x2):
        return self._fns["p"](x1, x2)

    def forcing(self, x1, x2):
        """Exact body force ``-div S(Dy*) + y*.grad y* + grad p*`` (two arrays)."""
        return _forcing(self._fns, np.asarray(x1, float), np.asarray(x2, float), self.alpha)


def _derive(case: ManufacturedCase) -> dict:
    psi = sp.Float(case.amplitude) * _expr.parse(case.psi)
    p = _expr.parse(case.pressure)
    y = [sp.diff(psi, X2), -sp.diff(psi, X1)]
    xs = (X1, X2)
    num = _expr.to_numpy
    fns = {"y1": num(y[0]), "y2": num(y[1]), "p": num(p),
           "dp": [num(sp.diff(p, xj)) for xj in xs],
           # grad[i][j] = d y_i / d x_j, hess[i][j][k] = d^2 y_i / dx_j dx_k
           "grad": [[num(sp.diff(y[i], xs[j])) for j in range(2)] for i in range(2)],
           "hess": [[[num(sp.diff(y[i], xs[j], xs[k])) for k in range(2)] for j in range(2)]
                    for i in range(2)]}
    a = case.alpha.symbolic
    if a is None:
        raise ValueError("manufactured cases need a constant or analytic exponent")
    fns["dalpha"] = [num(sp.diff(a, xj)) for xj in xs]
    return fns


def _forcing(f, x1, x2, alpha_field):
    x1, x2 = np.broadcast_arrays(x1, x2)
    grad = np.array([[f["grad"][i][j](x1, x2) for j in range(2)] for i in range(2)])
    hess = np.array([[[f["hess"][i][j][k](x1, x2) for k in range(2)] for j in range(2)]
                     for i in range(2)])
    y = np.array([f["y1"](x1, x2), f["y2"](x1, x2)])
    al = alpha_field(x1, x2)
    dal = np.array([f["dalpha"][j](x1, x2) for j in range(2)])
    D = 0.5 * (grad + grad.transpose(1, 0, *range(2, grad.ndim)))
    # dD[i, j, k] = d D_ij / d x_k
    dD = 0.5 * (hess + hess.transpose(1, 0, 2, *range(3, hess.ndim)))
    r = np.sqrt(np.sum(D * D, axis=(0, 1)))
    nu = (1.0 + r) ** (al - 2.0)
    safe = np.where(r > 0.0, r, 1.0)
    dr = np.where(r > 0.0, np.einsum("ij...,ijk...->k...", D, dD) / safe, 0.0)
    dnu = nu * (dal * np.log1p(r) + (al - 2.0) * dr / (1.0 + r))
    div_s = np.einsum("j...,ij...->i...", dnu, D) + nu * np.einsum("ijj...->i...", dD)
    conv = np.einsum("j...,ij...->i...", y, grad)
    dp = np.array([f["dp"][j](x1, x2) for j in range(2)])
    u = -div_s + conv + dp
    return u[0], u[1]


def _cases():
    return {
        "zero": ManufacturedCase("0", ExponentField.constant(2.0), pressure="0", name="zero"),
        "newtonian": ManufacturedCase(QUARTIC, ExponentField.constant(2.0), amplitude=100.0,
                                      name="newtonian"),
        "thinning": ManufacturedCase(QUARTIC, ExponentField.constant(1.5), amplitude=100.0,
                                     name="thinning"),
        "variable": ManufacturedCase(
            QUARTIC, ExponentField.from_expression("2 - 0.5*sin(pi*x1)"), amplitude=100.0,
            name="variable"),
        "variable_thick": ManufacturedCase(
            QUARTIC, ExponentField.from_expression("2 + 0.5*sin(pi*x1)"), amplitude=100.0,
            name="variable_thick"),
    }


MMS_CASES = _cases()


def manufacture(case: ManufacturedCase, g: Grid):
    """Sample ``(u*, y*, p*)`` of ``case`` onto the MAC grid."""
    xu, yu = g.u_points()
    xv, yv = g.v_points()
    fu, _ = case.forcing(xu, yu)
    _, fv = case.forcing(xv, yv)
    yex = StaggeredField(case.velocity(xu, yu)[0], case.velocity(xv, yv)[1])
    xc, yc = g.centers()
    p = case.pressure_at(xc, yc)
    p = p - p.mean()
    return StaggeredField(fu, fv).with_dirichlet(), yex.with_dirichlet(), p


def convergence_study(case: ManufacturedCase, grids: Sequence[Grid],
                      cfg: SolverConfig | None = None) -> list:
    """Solve on each grid and report errors and observed orders.

    Rows carry ``n, h, error_L2, error_H1`` (the latter in the discrete
    symmetric-gradient norm), pairwise orders ``log2(e_2h / e_h)`` and the
    solve diagnostics needed for the energy checks.
    """
    if len(grids) < 3:
        raise ValueError("a refinement study needs at least three grids")
    for a, b in zip(grids, grids[1:]):
        if not np.isclose(a.h, 2.0 * b.h):
            raise ValueError("grids must halve h at every step")
    rows = []
    for g in grids:
        u, yex, _ = manufacture(case, g)
        sol = solve_state(u, case.alpha, g, cfg)
        e = sol.y - yex
        rows.append({"n": g.nx, "h": g.h, "error_L2": l2_norm(e, g),
                     "error_H1": sym_grad_norm(e, g), "iterations": sol.iterations,
                     "energy_lhs": sol.energy_lhs, "energy_rhs_bound": sol.energy_rhs_bound,
                     "energy_gap": sol.energy_gap, "order_L2": None, "order_H1": None})
    for prev, cur in zip(rows, rows[1:]):
        for key in ("L2", "H1"):
            a, b = prev[f"error_{key}"], cur[f"error_{key}"]
            cur[f"order_{key}"] = float(np.log2(a / b)) if a > 0 and b > 0 else None
    return rows


# -- inequality campaigns -------------------------------------------------

_CHECKS = ("A1", "A2", "continuity", "coercivity", "monotonicity")


def _normalize(margin, *terms):
    scale = np.maximum.reduce([np.abs(t) for t in terms])
    return np.where(scale > 0.0, margin / np.where(scale > 0.0, scale, 1.0), margin)


def campaign_margins(eta, zeta, alpha, constants: TensorConstants) -> dict:
    """Scale-normalized margins of every structural inequality on a batch.

    A margin below ``-1e-12`` is a violation; each is divided by the larger
    magnitude of the two sides it compares.
    """
    eta = np.asarray(eta, float)
    zeta = np.asarray(zeta, float)
    al = np.asarray(alpha, float)
    r = tensor.frobenius(eta)
    w = (1.0 + r) ** (al - 2.0)
    out = {}
    a1 = tensor.check_A1(eta, al, constants)
    out["A1"] = _normalize(a1, constants.C3 * w)
    a2 = tensor.check_A2(eta, zeta, al, constants)
    bound2 = constants.C4 * w * np.sum(zeta * zeta, axis=(-2, -1))
    out["A2"] = _normalize(a2, a2 + bound2, bound2)
    out["continuity"] = _normalize(tensor.continuity_margin(eta, al), w * r)
    cb = tensor.coercivity_bound(eta, al, constants)
    out["coercivity"] = _normalize(tensor.coercivity_margin(eta, al, constants), cb,
                                   tensor.coercivity_margin(eta, al, constants) + cb)
    mb = tensor.monotonicity_bound(eta, zeta, al, constants)
    mm = tensor.monotonicity_margin(eta, zeta, al, constants)
    out["monotonicity"] = _normalize(mm, mb, mm + mb)
    return out


def _random_sym(rng, count, dim, norms):
    a = rng.standard_normal((count, dim, dim))
    a = 0.5 * (a + a.transpose(0, 2, 1))
    return a * (norms / tensor.frobenius(a))[:, None, None]


def _rank_one(rng, count, dim, norms):
    # a single diagonal entry carries the whole norm: sharp case of A1
    a = np.zeros((count, dim, dim))
    idx = rng.integers(0, dim, count)
    a[np.arange(count), idx, idx] = norms * rng.choice([-1.0, 1.0], count)
    return a


def _samples(constants: TensorConstants, samples: int, seed: int, dim: int):
    rng = np.random.default_rng([seed, dim])
    logr = rng.uniform(-6.0, 6.0, (2, samples))
    rn, zn = 10.0 ** logr
    eta = _random_sym(rng, samples, dim, rn)
    zeta = _random_sym(rng, samples, dim, zn)
    alpha = rng.uniform(constants.alpha0, constants.alpha_inf, samples)
    # one in eight samples probes the sharp configurations: rank-one eta at an
    # endpoint exponent, with zeta parallel to eta half of the time
    sharp = rng.random(samples) < 0.125
    k = int(sharp.sum())
    if k:
        eta[sharp] = _rank_one(rng, k, dim, rn[sharp])
        ends = np.array([constants.alpha0, min(max(2.0, constants.alpha0), constants.alpha_inf),
                         constants.alpha_inf])
        alpha[sharp] = rng.choice(ends, k)
        par = rng.random(k) < 0.5
        z = zeta[sharp]
        z[par] = eta[sharp][par] * (zn[sharp][par] / rn[sharp][par])[:, None, None]
        zeta[sharp] = z
    return eta, zeta, alpha


def inequality_campaign(constants: TensorConstants, samples: int = 100_000, seed: int = 0,
                        dims: Sequence[int] = (2, 3), tol: float = 1e-12) -> dict:
    """Certify the structural inequalities of the stress law on random samples.

    Half of the samples are 2x2 and half 3x3 matrices (for the default
    ``dims``). The report lists, per inequality, the worst normalized margin,
    the number of violations below ``-tol`` and the arg-min sample.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    per = [samples // len(dims) + (1 if i < samples % len(dims) else 0) for i in range(len(dims))]
    report = {"samples": int(samples), "seed": int(seed), "tolerance": tol,
              "constants": {k: float(getattr(constants, k)) for k in
                            ("alpha0", "alpha_inf", "C3", "C4", "nu_mono", "nu_thick")},
              "checks": {}}
    worst = {c: None for c in _CHECKS}
    for dim, count in zip(dims, per):
        if count == 0:
            continue
        eta, zeta, alpha = _samples(constants, count, seed, dim)
        margins = campaign_margins(eta, zeta, alpha, constants)
        for c in _CHECKS:
            m = margins[c]
            i = int(np.argmin(m))
            entry = worst[c] or {"worst_margin": np.inf, "violations": 0}
            entry["violations"] += int(np.count_nonzero(m < -tol))
            if m[i] < entry["worst_margin"]:
                entry.update(worst_margin=float(m[i]), argmin={
                    "dim": dim, "index": i, "alpha": float(alpha[i]),
                    "eta_norm": float(tensor.frobenius(eta[i])),
                    "zeta_norm": float(tensor.frobenius(zeta[i]))})
            worst[c] = entry
    report["checks"] = worst
    report["passed"] = all(v["violations"] == 0 for v in worst.values())
    return report


def negative_controls(alpha0: float = 1.1, alpha_inf: float = 4.0) -> dict:
    """Constants inflated beyond the sharp cases; each campaign must fail."""
    base = TensorConstants.from_bounds(alpha0, alpha_inf)
    return {
        "C3_x0.9": TensorConstants(alpha0, alpha_inf, 0.9 * base.C3, base.C4, base.nu_mono),
        "C4_eq_2": TensorConstants(alpha0, alpha_inf, base.C3, 2.0, base.nu_mono),
        "nu_thick_1.1": TensorConstants(alpha0, alpha_inf, base.C3, base.C4, base.nu_mono, 1.1),
    }


# -- derivative consistency and discrete identities -------------------------

def jacobian_consistency(samples: int = 1000, seed: int = 0, alpha_bounds=(1.1, 4.0),
                         dim: int = 2, rel_step: float = 1e-4) -> dict:
    """Central-difference checks of ``stress_jacobian`` and of ``grad potential == stress``.

    Each sample uses the step ``rel_step * |eta|`` so that the truncation
    error stays relative across the whole magnitude range. Errors are
    maxima over entries divided by the largest entry of the exact value.
    """
    rng = np.random.default_rng([seed, 7])
    norms = 10.0 ** rng.uniform(-6.0, 6.0, samples)
    eta = _random_sym(rng, samples, dim, norms)
    alpha = rng.uniform(alpha_bounds[0], alpha_bounds[1], samples)
    jac = tensor.stress_jacobian(eta, alpha)
    S = tensor.stress(eta, alpha)
    fd_jac = np.empty_like(jac)
    fd_grad = np.empty_like(eta)
    h = rel_step * norms
    for i in range(dim):
        for j in range(dim):
            e = np.zeros((dim, dim))
            e[i, j] = 1.0
            step = h[:, None, None] * e
            fd_jac[:, i, j] = (tensor.stress(eta + step, alpha)
                               - tensor.stress(eta - step, alpha)) / (2.0 * h[:, None, None])
            fd_grad[:, i, j] = (tensor.potential(eta + step, alpha)
                                - tensor.potential(eta - step, alpha)) / (2.0 * h)
    jac_err = (np.max(np.abs(fd_jac - jac), axis=(1, 2, 3, 4))
               / np.max(np.abs(jac), axis=(1, 2, 3, 4)))
    grad_err = np.max(np.abs(fd_grad - S), axis=(1, 2)) / np.max(np.abs(S), axis=(1, 2))
    return {"samples": int(samples), "seed": int(seed), "dim": dim,
            "jacobian_max_rel_error": float(jac_err.max()),
            "potential_gradient_max_rel_error": float(grad_err.max()),
            "worst_jacobian_sample": {"eta_norm": float(norms[jac_err.argmax()]),
                                      "alpha": float(alpha[jac_err.argmax()])},
            "worst_potential_sample": {"eta_norm": float(norms[grad_err.argmax()]),
                                       "alpha": float(alpha[grad_err.argmax()])}}


def structural_identities(g: Grid, fields: int = 100, seed: int = 0) -> dict:
    """Worst relative defects of the discrete skew-symmetry and adjoint identities.

    For divergence-free ``y`` (from a random stream function) and random
    ``v, w`` vanishing on the walls: ``c(y, v, v) = 0``,
    ``c(y, v, w) = -c(y, w, v)`` and ``(T, D v) = -(div T, v)``.
    """
    rng = np.random.default_rng([seed, 11])
    worst = {"skew_vv": 0.0, "skew_vw": 0.0, "stress_adjoint": 0.0, "divergence_free": 0.0}

    def rand_vel():
        return StaggeredField(rng.standard_normal(g.u_shape),
                              rng.standard_normal(g.v_shape)).with_dirichlet()

    for _ in range(fields):
        psi = np.zeros((g.nx + 1, g.ny + 1))
        psi[1:-1, 1:-1] = rng.standard_normal((g.nx - 1, g.ny - 1))
        y = discrete_stream_field(psi, g)
        v, w = rand_vel(), rand_vel()
        cy_v = convect(y, v, g)
        cy_w = convect(y, w, g)
        scale_vv = l2_norm(cy_v, g) * l2_norm(v, g)
        worst["skew_vv"] = max(worst["skew_vv"], abs(inner_product(cy_v, v, g)) / scale_vv)
        a, b = inner_product(cy_v, w, g), inner_product(cy_w, v, g)
        scale = max(l2_norm(cy_v, g) * l2_norm(w, g), l2_norm(cy_w, g) * l2_norm(v, g))
        worst["skew_vw"] = max(worst["skew_vw"], abs(a + b) / scale)
        comps = rng.standard_normal((3, g.nx, g.ny, 4))
        T = SymTensorField.from_components(*comps)
        lhs = tensor_inner_product(T, sym_gradient(v, g), g)
        rhs = -inner_product(div_stress(T, g), v, g)
        worst["stress_adjoint"] = max(worst["stress_adjoint"],
                                      abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
        worst["divergence_free"] = max(worst["divergence_free"],
                                       float(np.abs(divergence(y, g)).max()) / y.max_abs())
    return {"grid": [g.nx, g.ny], "fields": int(fields), "seed": int(seed), "worst": worst}
