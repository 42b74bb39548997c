"""Spatially varying exponent alpha(x) on a rectangular domain."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import minimize

from . import _expr
from .tensor import ExponentValue, TensorConstants

__all__ = [
    "ExponentField",
    "DomainError",
    "ExponentBoundError",
    "eval_alpha",
    "holder_seminorm",
    "holder_exponent_for",
]

_SLACK = 1e-12


class DomainError(ValueError):
    """Evaluation point outside the closed domain."""


class ExponentBoundError(ValueError):
    """Evaluated exponent escaped the declared bounds [alpha0, alpha_inf]."""


@dataclass(frozen=True)
class ExponentField:
    """Exponent field of one of three kinds: constant, expression, grid.

    Use the ``constant``, ``from_expression`` and ``from_samples`` /
    ``from_csv`` constructors; they fill in ``alpha0``/``alpha_inf`` when not
    declared (for expressions by dense sampling plus local refinement).
    """

    kind: str
    alpha0: float
    alpha_inf: float
    domain: tuple = (1.0, 1.0)
    holder_gamma: float = 0.5
    holder_budget: Optional[float] = None
    value: Optional[float] = None
    expression: Optional[str] = None
    samples: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    _fn: Optional[Callable] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("constant", "expression", "grid"):
            raise ValueError(f"unknown exponent field kind {self.kind!r}")
        if not self.alpha0 > 1.0:
            raise ValueError(f"alpha0 must be > 1 (lower exponent bound), got {self.alpha0}")
        if not self.alpha0 <= self.alpha_inf < np.inf:
            raise ValueError(f"need alpha0 <= alpha_inf < inf, got {self.alpha0}, {self.alpha_inf}")
        if not 0.0 < self.holder_gamma < 1.0:
            raise ValueError(f"holder_gamma must lie in (0, 1), got {self.holder_gamma}")
        lx, ly = self.domain
        if not (lx > 0 and ly > 0):
            raise ValueError(f"domain extents must be positive, got {self.domain}")

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, value: float, domain=(1.0, 1.0), **kw) -> "ExponentField":
        value = float(value)
        return cls(kind="constant", alpha0=value, alpha_inf=value, value=value,
                   domain=tuple(domain), **kw)

    @classmethod
    def from_expression(cls, text: str, alpha0: float | None = None,
                        alpha_inf: float | None = None, domain=(1.0, 1.0), **kw) -> "ExponentField":
        expr = _expr.parse(text)
        fn = _expr.to_numpy(expr)
        lo, hi = _sampled_range(fn, domain)
        if alpha0 is None:
            alpha0 = lo
        if alpha_inf is None:
            alpha_inf = hi
        f = cls(kind="expression", alpha0=float(alpha0), alpha_inf=float(alpha_inf),
                expression=text, domain=tuple(domain), _fn=fn, **kw)
        if lo < f.alpha0 - _SLACK or hi > f.alpha_inf + _SLACK:
            raise ExponentBoundError(
                f"expression {text!r} ranges over [{lo}, {hi}], outside declared "
                f"[{f.alpha0}, {f.alpha_inf}]")
        return f

    @classmethod
    def from_samples(cls, samples, domain=(1.0, 1.0), alpha0: float | None = None,
                     alpha_inf: float | None = None, **kw) -> "ExponentField":
        """Bilinear field through node samples ``samples[i, j]`` at
        ``(i Lx/(mx-1), j Ly/(my-1))``."""
        s = np.array(samples, dtype=float)
        if s.ndim != 2 or min(s.shape) < 2:
            raise ValueError("gridded exponent needs a 2-D array with at least 2x2 nodes")
        if not np.all(np.isfinite(s)):
            raise ValueError("gridded exponent samples must be finite")
        s.setflags(write=False)
        lo, hi = float(s.min()), float(s.max())
        alpha0 = lo if alpha0 is None else float(alpha0)
        alpha_inf = hi if alpha_inf is None else float(alpha_inf)
        lx, ly = domain
        interp = RegularGridInterpolator(
            (np.linspace(0.0, lx, s.shape[0]), np.linspace(0.0, ly, s.shape[1])), s,
            method="linear")

        def fn(x1, x2):
            x1, x2 = np.broadcast_arrays(np.asarray(x1, float), np.asarray(x2, float))
            pts = np.stack([np.clip(x1, 0.0, lx), np.clip(x2, 0.0, ly)], axis=-1)
            return interp(pts.reshape(-1, 2)).reshape(x1.shape)

        f = cls(kind="grid", alpha0=alpha0, alpha_inf=alpha_inf, samples=s,
                domain=tuple(domain), _fn=fn, **kw)
        if lo < f.alpha0 - _SLACK or hi > f.alpha_inf + _SLACK:
            raise ExponentBoundError(
                f"samples range over [{lo}, {hi}], outside declared [{f.alpha0}, {f.alpha_inf}]")
        return f

    @classmethod
    def from_csv(cls, path, domain=(1.0, 1.0), **kw) -> "ExponentField":
        """Read node samples from a CSV with header ``i,j,value``."""
        rows = []
        with open(Path(path), newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["i", "j", "value"]:
                raise ValueError(f"{path}: expected header i,j,value, got {reader.fieldnames}")
            for row in reader:
                rows.append((int(row["i"]), int(row["j"]), float(row["value"])))
        if not rows:
            raise ValueError(f"{path}: no samples")
        mi = max(r[0] for r in rows) + 1
        mj = max(r[1] for r in rows) + 1
        s = np.full((mi, mj), np.nan)
        for i, j, v in rows:
            s[i, j] = v
        if np.isnan(s).any():
            raise ValueError(f"{path}: sample lattice has missing nodes")
        return cls.from_samples(s, domain=domain, **kw)

    # -- evaluation -------------------------------------------------------
    @property
    def constants(self) -> TensorConstants:
        return TensorConstants.from_bounds(self.alpha0, self.alpha_inf)

    @property
    def symbolic(self) -> sp.Expr | None:
        """Sympy expression of alpha(x1, x2), or None for gridded fields."""
        if self.kind == "constant":
            return sp.Float(self.value)
        if self.kind == "expression":
            return _expr.parse(self.expression)
        return None

    def _raw(self, x1, x2) -> np.ndarray:
        if self.kind == "constant":
            return np.full(np.broadcast(np.asarray(x1), np.asarray(x2)).shape, self.value)
        return self._fn(x1, x2)

    def __call__(self, x1, x2) -> np.ndarray:
        """Vectorized alpha(x1, x2) with domain and bound checks."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        lx, ly = self.domain
        tol = 1e-12 * max(lx, ly)
        if (np.any(x1 < -tol) or np.any(x1 > lx + tol)
                or np.any(x2 < -tol) or np.any(x2 > ly + tol)):
            raise DomainError(f"point outside the closed domain [0,{lx}]x[0,{ly}]")
        a = self._raw(x1, x2)
        slack = _SLACK * max(1.0, self.alpha_inf)
        if np.any(~np.isfinite(a)) or np.any(a < self.alpha0 - slack) \
                or np.any(a > self.alpha_inf + slack):
            raise ExponentBoundError(
                f"exponent left its bounds [{self.alpha0}, {self.alpha_inf}] "
                f"(observed [{np.nanmin(a)}, {np.nanmax(a)}])")
        return a


def _sampled_range(fn, domain, m: int = 513):
    lx, ly = domain
    xs, ys = np.meshgrid(np.linspace(0, lx, m), np.linspace(0, ly, m), indexing="ij")
    vals = fn(xs, ys)
    if not np.all(np.isfinite(vals)):
        raise ExponentBoundError("exponent expression is not finite on the domain")
    lo, hi = float(vals.min()), float(vals.max())
    bounds = [(0.0, lx), (0.0, ly)]
    for sign, idx in ((1.0, np.argmin(vals)), (-1.0, np.argmax(vals))):
        start = np.array([xs.flat[idx], ys.flat[idx]])
        res = minimize(lambda z: sign * float(fn(z[0], z[1])), start, method="L-BFGS-B",
                       bounds=bounds)
        if res.success or np.isfinite(res.fun):
            if sign > 0:
                lo = min(lo, float(res.fun))
            else:
                hi = max(hi, -float(res.fun))
    return lo, hi


def eval_alpha(field: ExponentField, x: Sequence[float]) -> ExponentValue:
    x1, x2 = x
    return ExponentValue(float(field(x1, x2)))


def holder_seminorm(field: ExponentField, gamma: float, sample_points, chunk: int = 1024) -> float:
    """Lower estimate of the Hoelder seminorm: max |a(p)-a(q)|/|p-q|^gamma over pairs."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    pts = np.asarray(sample_points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise ValueError("need at least two sample points")
    vals = field(pts[:, 0], pts[:, 1])
    best = 0.0
    for start in range(0, len(pts), chunk):
        p = pts[start:start + chunk]
        d = np.sqrt(((p[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
        idx = np.arange(start, start + len(p))
        d[np.arange(len(p)), idx] = np.inf
        if np.any(d == 0.0):
            raise ValueError("sample points must be pairwise distinct")
        ratio = np.abs(vals[start:start + chunk, None] - vals[None, :]) / d ** gamma
        best = max(best, float(ratio.max()))
    return best


def holder_exponent_for(q: float, n: int = 2) -> float:
    """Hoelder exponent 1 - n/q paired with an L^q forcing (requires q > n)."""
    if q <= n:
        raise ValueError(f"q must exceed the dimension {n}, got {q}")
    return 1.0 - n / q
