"""Extra-stress law S(eta) = (1 + |eta|)^(alpha - 2) eta and its structural bounds.

Every function accepts a single matrix (``SymMatrix`` or a ``(n, n)`` array)
or a batch of matrices with shape ``(..., n, n)``; ``alpha`` broadcasts
against the batch shape. ``|eta|`` is always the Frobenius norm.

The inequality checkers return signed margins: a nonnegative value certifies
the inequality at that sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import binom

__all__ = [
    "SymMatrix",
    "ExponentValue",
    "TensorConstants",
    "frobenius",
    "stress",
    "potential",
    "stress_jacobian",
    "contract_jacobian",
    "check_A1",
    "check_A2",
    "continuity_margin",
    "coercivity_margin",
    "monotonicity_margin",
]


@dataclass(frozen=True)
class SymMatrix:
    """Symmetric 2x2 or 3x3 matrix; symmetry is enforced on construction."""

    entries: np.ndarray = field(repr=True)

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] not in (2, 3):
            raise ValueError(f"expected a 2x2 or 3x3 matrix, got shape {a.shape}")
        if not np.allclose(a, a.T, rtol=1e-12, atol=1e-300):
            raise ValueError("matrix is not symmetric")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def norm(self) -> float:
        return float(frobenius(self.entries))

    @classmethod
    def zeros(cls, dim: int = 2) -> "SymMatrix":
        return cls(np.zeros((dim, dim)))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True)
class ExponentValue:
    alpha: float

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha <= 1.0:
            raise ValueError(f"exponent must satisfy alpha > 1, got {self.alpha}")

    def __float__(self):
        return float(self.alpha)


@dataclass(frozen=True)
class TensorConstants:
    """Constants of the derivative bounds and of coercivity/monotonicity.

    Build the proof constants with :meth:`from_bounds`. Direct construction
    accepts arbitrary values so that negative-control fixtures can inflate
    them. ``nu_thick`` is the constant of the ``alpha >= 2`` branches of the
    coercivity and monotonicity bounds (1 for the true law).
    """

    alpha0: float
    alpha_inf: float
    C3: float
    C4: float
    nu_mono: float
    nu_thick: float = 1.0

    def __post_init__(self):
        if not (1.0 < self.alpha0 <= self.alpha_inf < np.inf):
            raise ValueError(
                f"exponent bounds must satisfy 1 < alpha0 <= alpha_inf < inf, "
                f"got alpha0={self.alpha0}, alpha_inf={self.alpha_inf}"
            )

    @classmethod
    def from_bounds(cls, alpha0: float, alpha_inf: float) -> "TensorConstants":
        # case splits alpha < 2 / alpha >= 2 of the derivative bounds
        return cls(
            alpha0=float(alpha0),
            alpha_inf=float(alpha_inf),
            C3=max(3.0 - alpha0, alpha_inf - 1.0),
            C4=min(alpha0 - 1.0, 1.0),
            nu_mono=min(alpha0 - 1.0, 1.0),
        )


MatrixLike = Union[SymMatrix, np.ndarray]
AlphaLike = Union[ExponentValue, float, np.ndarray]


def _mat(eta: MatrixLike) -> np.ndarray:
    if isinstance(eta, SymMatrix):
        return eta.entries
    a = np.asarray(eta, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected (..., n, n) matrices, got shape {a.shape}")
    return a


def _alpha(alpha: AlphaLike) -> np.ndarray:
    a = np.asarray(float(alpha) if isinstance(alpha, ExponentValue) else alpha, dtype=float)
    if np.any(~(a > 1.0)):
        raise ValueError("exponent must satisfy alpha > 1")
    return a


def _check_range(a: np.ndarray, constants: TensorConstants) -> None:
    slack = 1e-12 * max(1.0, constants.alpha_inf)
    if np.any(a < constants.alpha0 - slack) or np.any(a > constants.alpha_inf + slack):
        raise ValueError(
            f"exponent outside [{constants.alpha0}, {constants.alpha_inf}] of the constants"
        )


def frobenius(eta: MatrixLike) -> np.ndarray:
    a = _mat(eta)
    return np.sqrt(np.sum(a * a, axis=(-2, -1)))


def _ddot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=(-2, -1))


def stress(eta: MatrixLike, alpha: AlphaLike):
    """Return S(eta) = (1 + |eta|)^(alpha - 2) eta.

    Returns a ``SymMatrix`` when given one, otherwise an array shaped like
    ``eta`` (broadcast against ``alpha``).
    """
    a = _mat(eta)
    al = _alpha(alpha)
    visc = (1.0 + frobenius(a)) ** (al - 2.0)
    out = visc[..., None, None] * a
    if isinstance(eta, SymMatrix):
        return SymMatrix(out)
    return out


def _potential_series(r: np.ndarray, al: np.ndarray, terms: int = 16) -> np.ndarray:
    # int_0^r s (1+s)^(a-2) ds = sum_k binom(a-2, k) r^(k+2) / (k+2), r < 1
    total = np.zeros(np.broadcast(r, al).shape)
    for k in range(terms):
        total = total + binom(al - 2.0, k) * r ** (k + 2) / (k + 2)
    return total


def potential(eta: MatrixLike, alpha: AlphaLike) -> np.ndarray:
    """Potential Phi(|eta|^2) whose eta-gradient is ``stress(eta, alpha)``.

    Closed form ``(1+r)^a/a - (1+r)^(a-1)/(a-1) - (1/a - 1/(a-1))`` at
    ``r = |eta|``; small ``r`` uses the binomial series to avoid cancellation.
    """
    r = frobenius(eta)
    al = _alpha(alpha)
    r, al = np.broadcast_arrays(r, al)
    out = np.empty(r.shape)
    small = r < 0.05
    if np.any(small):
        out[small] = _potential_series(r[small], al[small])
    big = ~small
    if np.any(big):
        rb, ab = r[big], al[big]
        # (1+r)^(a-1) - 1 evaluated without cancellation
        t = np.expm1((ab - 1.0) * np.log1p(rb))
        out[big] = ((ab - 1.0) * rb * (1.0 + t) - t) / (ab * (ab - 1.0))
    return out[()] if out.ndim == 0 else out


def stress_jacobian(eta: MatrixLike, alpha: AlphaLike) -> np.ndarray:
    """Fourth-order derivative tensor ``J[..., i, j, k, l] = dS_kl / d eta_ij``.

    Uses ``(a-2)(1+|eta|)^(a-3) eta_ij eta_kl / |eta| + (1+|eta|)^(a-2) d_ik d_jl``;
    the first term is taken as 0 at ``eta = 0`` (its limit).
    """
    a = _mat(eta)
    al = _alpha(alpha)
    n = a.shape[-1]
    r = frobenius(a)
    r, al = np.broadcast_arrays(r, al)
    safe_r = np.where(r > 0.0, r, 1.0)
    coef = np.where(r > 0.0, (al - 2.0) * (1.0 + r) ** (al - 3.0) / safe_r, 0.0)
    visc = (1.0 + r) ** (al - 2.0)
    outer = np.einsum("...ij,...kl->...ijkl", a, a)
    eye = np.einsum("ik,jl->ijkl", np.eye(n), np.eye(n))
    return coef[..., None, None, None, None] * outer + visc[..., None, None, None, None] * eye


def contract_jacobian(jac: np.ndarray, zeta: MatrixLike, xi: MatrixLike | None = None) -> np.ndarray:
    """Return ``sum_ijkl J_ijkl zeta_kl xi_ij`` (``xi`` defaults to ``zeta``)."""
    z = _mat(zeta)
    x = z if xi is None else _mat(xi)
    return np.einsum("...ijkl,...kl,...ij->...", jac, z, x)


def check_A1(eta: MatrixLike, alpha: AlphaLike, constants: TensorConstants) -> np.ndarray:
    """Margin ``C3 (1+|eta|)^(alpha-2) - max_ijkl |dS_kl/d eta_ij|``."""
    al = _alpha(alpha)
    _check_range(al, constants)
    jac = stress_jacobian(eta, al)
    worst = np.max(np.abs(jac), axis=(-4, -3, -2, -1))
    bound = constants.C3 * (1.0 + frobenius(eta)) ** (al - 2.0)
    return bound - worst


def check_A2(eta: MatrixLike, zeta: MatrixLike, alpha: AlphaLike,
             constants: TensorConstants) -> np.ndarray:
    """Margin ``S'(eta):zeta:zeta - C4 (1+|eta|)^(alpha-2) |zeta|^2``."""
    al = _alpha(alpha)
    _check_range(al, constants)
    lhs = contract_jacobian(stress_jacobian(eta, al), zeta)
    z = _mat(zeta)
    bound = constants.C4 * (1.0 + frobenius(eta)) ** (al - 2.0) * _ddot(z, z)
    return lhs - bound


def continuity_margin(eta: MatrixLike, alpha: AlphaLike) -> np.ndarray:
    """Margin ``(1+|eta|)^(alpha-2) |eta| - |S(eta)|``; zero up to rounding."""
    al = _alpha(alpha)
    r = frobenius(eta)
    return (1.0 + r) ** (al - 2.0) * r - frobenius(stress(_mat(eta), al))


def coercivity_bound(eta: MatrixLike, alpha: AlphaLike, constants: TensorConstants) -> np.ndarray:
    a = _mat(eta)
    al = _alpha(alpha)
    r2 = _ddot(a, a)
    thin = constants.nu_mono * (1.0 + np.sqrt(r2)) ** (al - 2.0) * r2
    return np.where(al < 2.0, thin, constants.nu_thick * r2)


def coercivity_margin(eta: MatrixLike, alpha: AlphaLike, constants: TensorConstants) -> np.ndarray:
    """Margin ``S(eta):eta - bound``, bound split at ``alpha < 2`` / ``alpha >= 2``."""
    al = _alpha(alpha)
    a = _mat(eta)
    return _ddot(stress(a, al), a) - coercivity_bound(a, al, constants)


def monotonicity_bound(eta: MatrixLike, zeta: MatrixLike, alpha: AlphaLike,
                       constants: TensorConstants) -> np.ndarray:
    a, b = _mat(eta), _mat(zeta)
    al = _alpha(alpha)
    d = a - b
    d2 = _ddot(d, d)
    # alpha < 2 implies alpha0 < 2, where nu_mono == alpha0 - 1
    thin = constants.nu_mono * (1.0 + frobenius(a) + frobenius(b)) ** (al - 2.0) * d2
    return np.where(al < 2.0, thin, constants.nu_thick * d2)


def monotonicity_margin(eta: MatrixLike, zeta: MatrixLike, alpha: AlphaLike,
                        constants: TensorConstants) -> np.ndarray:
    """Margin ``(S(eta) - S(zeta)):(eta - zeta) - bound``."""
    a, b = _mat(eta), _mat(zeta)
    al = _alpha(alpha)
    lhs = _ddot(stress(a, al) - stress(b, al), a - b)
    return lhs - monotonicity_bound(a, b, al, constants)
