"""Uniform MAC grid on a rectangle and the discrete operators used by the solver.

Layout (index ``[i, j]``, ``i`` along x)::

    u[i, j]  vertical faces    x = i h,        y = (j + 1/2) h   shape (nx+1, ny)
    v[i, j]  horizontal faces  x = (i + 1/2) h, y = j h          shape (nx, ny+1)
    p[i, j]  cell centres                                         shape (nx, ny)

The homogeneous Dirichlet condition fixes the normal faces on the walls
(``u[0], u[nx], v[:, 0], v[:, ny]``) to zero; tangential wall values enter
through reflected ghost values, so wall-node derivatives read ``2 u / h``.

The symmetric gradient is sampled at four quadrature points per cell, one per
quadrant: the normal strains come from the cell centre and the shear strain
from the quadrant's corner node. Cell-centre tensors are the quadrant means,
i.e. the corner shears averaged. The stress divergence is the negative adjoint
of this sampled gradient, so ``(div_stress(T), v) == -(T, Dv)`` holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

__all__ = [
    "Grid",
    "StaggeredField",
    "SymTensorField",
    "Operators",
    "operators",
    "sym_gradient",
    "divergence",
    "convect",
    "div_stress",
    "pressure_gradient",
    "inner_product",
    "tensor_inner_product",
    "l2_norm",
    "grad_norm",
    "h1_norm",
    "sym_grad_norm",
    "lq_norm",
    "cell_velocity",
    "discrete_stream_field",
    "estimate_poincare_korn",
]

QUADRANTS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class Grid:
    Lx: float
    Ly: float
    nx: int
    ny: int

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("cell counts must be integers")
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"need nx, ny >= 4, got {self.nx}x{self.ny}")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError("domain extents must be positive")
        hx, hy = self.Lx / self.nx, self.Ly / self.ny
        if abs(hx - hy) > 1e-12 * hx:
            raise ValueError(f"cells must be square: Lx/nx={hx} != Ly/ny={hy}")

    @classmethod
    def unit_square(cls, n: int) -> "Grid":
        return cls(1.0, 1.0, n, n)

    @property
    def h(self) -> float:
        return self.Lx / self.nx

    @property
    def u_shape(self):
        return (self.nx + 1, self.ny)

    @property
    def v_shape(self):
        return (self.nx, self.ny + 1)

    @property
    def cell_shape(self):
        return (self.nx, self.ny)

    @property
    def n_u(self) -> int:
        return (self.nx + 1) * self.ny

    @property
    def n_vel(self) -> int:
        return self.n_u + self.nx * (self.ny + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def u_points(self):
        h = self.h
        return np.meshgrid(np.arange(self.nx + 1) * h, (np.arange(self.ny) + 0.5) * h,
                           indexing="ij")

    def v_points(self):
        h = self.h
        return np.meshgrid((np.arange(self.nx) + 0.5) * h, np.arange(self.ny + 1) * h,
                           indexing="ij")

    def centers(self):
        h = self.h
        return np.meshgrid((np.arange(self.nx) + 0.5) * h, (np.arange(self.ny) + 0.5) * h,
                           indexing="ij")

    def nodes(self):
        h = self.h
        return np.meshgrid(np.arange(self.nx + 1) * h, np.arange(self.ny + 1) * h,
                           indexing="ij")

    def refine(self) -> "Grid":
        return Grid(self.Lx, self.Ly, 2 * self.nx, 2 * self.ny)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StaggeredField:
    """Velocity-like field: ``u`` on vertical faces, ``v`` on horizontal faces."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", _frozen(self.u))
        object.__setattr__(self, "v", _frozen(self.v))
        if self.u.ndim != 2 or self.v.ndim != 2 or \
                self.u.shape != (self.v.shape[0] + 1, self.v.shape[1] - 1):
            raise ValueError(f"inconsistent staggered shapes {self.u.shape}, {self.v.shape}")

    @classmethod
    def zeros(cls, g: Grid) -> "StaggeredField":
        return cls(np.zeros(g.u_shape), np.zeros(g.v_shape))

    @classmethod
    def from_functions(cls, g: Grid, fu, fv) -> "StaggeredField":
        """Sample ``fu(x, y)`` on u-faces and ``fv(x, y)`` on v-faces."""
        xu, yu = g.u_points()
        xv, yv = g.v_points()
        return cls(np.broadcast_to(fu(xu, yu), g.u_shape), np.broadcast_to(fv(xv, yv), g.v_shape))

    @classmethod
    def from_flat(cls, g: Grid, vec) -> "StaggeredField":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (g.n_vel,):
            raise ValueError(f"expected a vector of length {g.n_vel}, got {vec.shape}")
        return cls(vec[:g.n_u].reshape(g.u_shape), vec[g.n_u:].reshape(g.v_shape))

    @property
    def shape(self):
        return (self.u.shape, self.v.shape)

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.v.ravel()])

    def boundary_max(self) -> float:
        """Largest |normal component| on the walls."""
        return float(max(np.abs(self.u[[0, -1], :]).max(), np.abs(self.v[:, [0, -1]]).max()))

    def with_dirichlet(self) -> "StaggeredField":
        u = self.u.copy()
        v = self.v.copy()
        u[[0, -1], :] = 0.0
        v[:, [0, -1]] = 0.0
        return StaggeredField(u, v)

    def max_abs(self) -> float:
        return float(max(np.abs(self.u).max(), np.abs(self.v).max()))

    def __add__(self, other):
        return StaggeredField(self.u + other.u, self.v + other.v)

    def __sub__(self, other):
        return StaggeredField(self.u - other.u, self.v - other.v)

    def __mul__(self, s):
        return StaggeredField(self.u * s, self.v * s)

    __rmul__ = __mul__

    def __neg__(self):
        return StaggeredField(-self.u, -self.v)


@dataclass(frozen=True, eq=False)
class SymTensorField:
    """Symmetric 2x2 tensors at the four quadrant points of every cell.

    ``values`` has shape ``(nx, ny, 4, 2, 2)``; :meth:`center` gives the
    cell-centre tensor (mean over quadrants).
    """

    values: np.ndarray

    def __post_init__(self):
        a = np.array(self.values, dtype=float)
        if a.ndim != 5 or a.shape[2:] != (4, 2, 2):
            raise ValueError(f"expected shape (nx, ny, 4, 2, 2), got {a.shape}")
        a = 0.5 * (a + np.swapaxes(a, -1, -2))
        a.setflags(write=False)
        object.__setattr__(self, "values", a)

    @classmethod
    def from_components(cls, d11, d22, d12) -> "SymTensorField":
        d11, d22, d12 = np.broadcast_arrays(d11, d22, d12)
        a = np.empty(d11.shape + (2, 2))
        a[..., 0, 0] = d11
        a[..., 1, 1] = d22
        a[..., 0, 1] = a[..., 1, 0] = d12
        return cls(a)

    @classmethod
    def constant(cls, g: Grid, mat) -> "SymTensorField":
        return cls(np.broadcast_to(np.asarray(mat, float), (g.nx, g.ny, 4, 2, 2)))

    def components(self):
        a = self.values
        return a[..., 0, 0], a[..., 1, 1], a[..., 0, 1]

    def center(self) -> np.ndarray:
        return self.values.mean(axis=2)

    def norm(self) -> np.ndarray:
        """Pointwise Frobenius norm, shape ``(nx, ny, 4)``."""
        return np.sqrt(np.sum(self.values ** 2, axis=(-2, -1)))


def _diff(n: int, h: float) -> sps.csr_matrix:
    """(n, n+1) forward difference."""
    return sps.diags([-np.ones(n), np.ones(n)], [0, 1], shape=(n, n + 1), format="csr") / h


def _node_diff(n: int, h: float) -> sps.csr_matrix:
    """(n+1, n) difference from cell-centred values to nodes, reflected ghosts at the ends."""
    m = sps.lil_matrix((n + 1, n))
    m[0, 0] = 2.0
    for k in range(1, n):
        m[k, k - 1] = -1.0
        m[k, k] = 1.0
    m[n, n - 1] = -2.0
    return m.tocsr() / h


def _pick(n: int, d: int) -> sps.csr_matrix:
    return sps.eye(n, n + 1, k=d, format="csr")


class Operators:
    """Sparse operator set for one grid; obtain through :func:`operators`."""

    def __init__(self, g: Grid):
        self.grid = g
        nx, ny, h = g.nx, g.ny, g.h
        self.h = h
        n_u, n_vel = g.n_u, g.n_vel
        n_v = n_vel - n_u
        Inx, Iny = sps.identity(nx), sps.identity(ny)

        dx_u = sps.kron(_diff(nx, h), Iny)                       # cells <- u
        dy_v = sps.kron(Inx, _diff(ny, h))                       # cells <- v
        zc_u = sps.csr_matrix((g.n_cells, n_u))
        zc_v = sps.csr_matrix((g.n_cells, n_v))
        d11 = sps.hstack([dx_u, zc_v])
        d22 = sps.hstack([zc_u, dy_v])
        self.div = sps.hstack([dx_u, dy_v]).tocsr()

        n_nodes = (nx + 1) * (ny + 1)
        uy = sps.kron(sps.identity(nx + 1), _node_diff(ny, h))  # nodes <- u
        vx = sps.kron(_node_diff(nx, h), sps.identity(ny + 1))  # nodes <- v
        uy_full = sps.hstack([uy, sps.csr_matrix((n_nodes, n_v))])
        vx_full = sps.hstack([sps.csr_matrix((n_nodes, n_u)), vx])
        shear = 0.5 * (uy_full + vx_full)

        picks = [sps.kron(_pick(nx, di), _pick(ny, dj)) for di, dj in QUADRANTS]
        # rows ordered (component, quadrant, cell)
        self.G = sps.vstack([d11] * 4 + [d22] * 4 + [p @ shear for p in picks]).tocsr()
        self.n_q = 4 * g.n_cells

        # full gradient (for the W^{1,2} seminorm) with trapezoidal node weights
        wn = np.ones((nx + 1, ny + 1))
        wn[[0, -1], :] *= 0.5
        wn[:, [0, -1]] *= 0.5
        self.grad = sps.vstack([d11, d22, uy_full, vx_full]).tocsr()
        self.grad_w = h * h * np.concatenate(
            [np.ones(g.n_cells), np.ones(g.n_cells), wn.ravel(), wn.ravel()])

        wu = np.ones(g.u_shape)
        wu[[0, -1], :] = 0.5
        wv = np.ones(g.v_shape)
        wv[:, [0, -1]] = 0.5
        self.face_w = h * h * np.concatenate([wu.ravel(), wv.ravel()])

        free_u = np.zeros(g.u_shape, bool)
        free_u[1:-1, :] = True
        free_v = np.zeros(g.v_shape, bool)
        free_v[:, 1:-1] = True
        self.free = np.concatenate([free_u.ravel(), free_v.ravel()])
        self.free_idx = np.flatnonzero(self.free)

        self._build_convection()

    def _build_convection(self):
        g = self.grid
        nx, ny, h = g.nx, g.ny, g.h
        n_u = g.n_u

        def iu(i, j):
            return i * ny + j

        def iv(i, j):
            return n_u + i * (ny + 1) + j

        A, B, C = [], [], []
        # u control volumes: east-west faces
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        for c in (iu(i, j), iu(i + 1, j)):
            A.append(iu(i, j)); B.append(iu(i + 1, j)); C.append(c)
        # u control volumes: north-south faces through nodes
        i, j = np.meshgrid(np.arange(1, nx), np.arange(ny - 1), indexing="ij")
        for c in (iv(i - 1, j + 1), iv(i, j + 1)):
            A.append(iu(i, j)); B.append(iu(i, j + 1)); C.append(c)
        # v control volumes: north-south faces
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        for c in (iv(i, j), iv(i, j + 1)):
            A.append(iv(i, j)); B.append(iv(i, j + 1)); C.append(c)
        # v control volumes: east-west faces through nodes
        i, j = np.meshgrid(np.arange(nx - 1), np.arange(1, ny), indexing="ij")
        for c in (iu(i + 1, j - 1), iu(i + 1, j)):
            A.append(iv(i, j)); B.append(iv(i + 1, j)); C.append(c)

        a = np.concatenate([x.ravel() for x in A])
        b = np.concatenate([x.ravel() for x in B])
        c = np.concatenate([x.ravel() for x in C])
        w = np.full(a.shape, 1.0 / (4.0 * h))
        # flux f_ab leaves a and enters b: antisymmetric pair of entries
        rows = np.concatenate([a, b])
        cols = np.concatenate([b, a])
        via = np.concatenate([c, c])
        wts = np.concatenate([w, -w])
        keep = self.free[rows] & self.free[cols]
        self._conv = (rows[keep], cols[keep], via[keep], wts[keep])

    # -- convection -----------------------------------------------------
    def convect_vec(self, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        r, c, k, w = self._conv
        return np.bincount(r, weights=w * y[k] * v[c], minlength=self.grid.n_vel)

    def convection_matrix(self, y: np.ndarray) -> sps.csr_matrix:
        """Matrix of ``v -> convect(y, v)``."""
        r, c, k, w = self._conv
        n = self.grid.n_vel
        return sps.csr_matrix((w * y[k], (r, c)), shape=(n, n))

    def convection_matrix_first(self, v: np.ndarray) -> sps.csr_matrix:
        """Matrix of ``y -> convect(y, v)``."""
        r, c, k, w = self._conv
        n = self.grid.n_vel
        return sps.csr_matrix((w * v[c], (r, k)), shape=(n, n))

    # -- stress ---------------------------------------------------------
    @property
    def quad_weight(self) -> float:
        return 0.25 * self.h * self.h

    def sym_grad_vec(self, y: np.ndarray) -> np.ndarray:
        """Quadrant strains as an array ``(3, 4, nx, ny)``: d11, d22, d12."""
        g = self.grid
        return (self.G @ y).reshape(3, 4, g.nx, g.ny)

    def div_stress_vec(self, t11, t22, t12) -> np.ndarray:
        """Strong-form ``div T`` on faces from quadrant components ``(4, nx, ny)``."""
        flux = np.concatenate([np.ravel(t11), np.ravel(t22), 2.0 * np.ravel(t12)])
        out = -(self.quad_weight / self.h ** 2) * (self.G.T @ flux)
        out[~self.free] = 0.0
        return out

    def viscous_matrix(self, weights3: np.ndarray) -> sps.csr_matrix:
        """Matrix of ``y -> -div_stress(C : D y)`` for per-point 3x3 blocks.

        ``weights3`` has shape ``(4, nx, ny, 3, 3)`` and maps strains
        ``(d11, d22, d12)`` to ``(T11, T22, 2 T12)``.
        """
        nq = self.n_q
        blk = weights3.reshape(nq, 3, 3)
        rows, cols, vals = [], [], []
        base = np.arange(nq)
        for r in range(3):
            for c in range(3):
                rows.append(r * nq + base)
                cols.append(c * nq + base)
                vals.append(blk[:, r, c])
        W = sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(3 * nq, 3 * nq))
        return ((self.quad_weight / self.h ** 2) * (self.G.T @ W @ self.G)).tocsr()


@lru_cache(maxsize=16)
def operators(g: Grid) -> Operators:
    return Operators(g)


def _as_tensor(T: SymTensorField, g: Grid):
    if T.values.shape[:2] != g.cell_shape:
        raise ValueError(f"tensor field shape {T.values.shape[:2]} does not match grid {g.cell_shape}")
    t = np.moveaxis(T.values, 2, 0)  # (4, nx, ny, 2, 2)
    return t[..., 0, 0], t[..., 1, 1], t[..., 0, 1]


def _check_vel(y: StaggeredField, g: Grid):
    if y.u.shape != g.u_shape or y.v.shape != g.v_shape:
        raise ValueError(f"field shape {y.shape} does not match grid {g.u_shape}, {g.v_shape}")


def sym_gradient(y: StaggeredField, g: Grid) -> SymTensorField:
    """Symmetric velocity gradient at the quadrant points of every cell."""
    _check_vel(y, g)
    d = operators(g).sym_grad_vec(y.flat)           # (3, 4, nx, ny)
    d = np.moveaxis(d, 1, -1)                         # (3, nx, ny, 4)
    return SymTensorField.from_components(d[0], d[1], d[2])


def divergence(y: StaggeredField, g: Grid) -> np.ndarray:
    _check_vel(y, g)
    return (operators(g).div @ y.flat).reshape(g.cell_shape)


def convect(y: StaggeredField, v: StaggeredField, g: Grid) -> StaggeredField:
    """Skew-symmetric discretization of ``y . grad v`` (zero on wall faces)."""
    _check_vel(y, g)
    _check_vel(v, g)
    return StaggeredField.from_flat(g, operators(g).convect_vec(y.flat, v.flat))


def div_stress(T: SymTensorField, g: Grid) -> StaggeredField:
    """Discrete ``div T`` on interior faces, the negative adjoint of :func:`sym_gradient`."""
    t11, t22, t12 = _as_tensor(T, g)
    return StaggeredField.from_flat(g, operators(g).div_stress_vec(t11, t22, t12))


def pressure_gradient(p: np.ndarray, g: Grid) -> StaggeredField:
    """``grad p`` on interior faces; the negative adjoint of :func:`divergence`."""
    p = np.asarray(p, float)
    if p.shape != g.cell_shape:
        raise ValueError(f"pressure shape {p.shape} does not match grid {g.cell_shape}")
    ops = operators(g)
    out = -(ops.div.T @ p.ravel())
    out[~ops.free] = 0.0
    return StaggeredField.from_flat(g, out)


def inner_product(a, b, g: Grid) -> float:
    """L2 inner product by midpoint quadrature (trapezoidal weight on wall faces)."""
    if isinstance(a, StaggeredField) and isinstance(b, StaggeredField):
        _check_vel(a, g)
        _check_vel(b, g)
        return float(np.dot(operators(g).face_w * a.flat, b.flat))
    if isinstance(a, StaggeredField) or isinstance(b, StaggeredField):
        raise ValueError("cannot pair a staggered field with a scalar field")
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.shape != g.cell_shape or b.shape != g.cell_shape:
        raise ValueError(f"shape mismatch: {a.shape}, {b.shape} vs cells {g.cell_shape}")
    return float(g.h ** 2 * np.sum(a * b))


def tensor_inner_product(S: SymTensorField, T: SymTensorField, g: Grid) -> float:
    if S.values.shape != T.values.shape or S.values.shape[:2] != g.cell_shape:
        raise ValueError("tensor field shapes do not match")
    return float(0.25 * g.h ** 2 * np.sum(S.values * T.values))


def l2_norm(y: StaggeredField, g: Grid) -> float:
    return float(np.sqrt(max(inner_product(y, y, g), 0.0)))


def grad_norm(y: StaggeredField, g: Grid) -> float:
    ops = operators(g)
    d = ops.grad @ y.flat
    return float(np.sqrt(np.dot(ops.grad_w * d, d)))


def h1_norm(y: StaggeredField, g: Grid) -> float:
    return float(np.hypot(l2_norm(y, g), grad_norm(y, g)))


def sym_grad_norm(y: StaggeredField, g: Grid) -> float:
    D = sym_gradient(y, g)
    return float(np.sqrt(tensor_inner_product(D, D, g)))


def cell_velocity(y: StaggeredField) -> np.ndarray:
    """Face-averaged velocity at cell centres, shape ``(nx, ny, 2)``."""
    return np.stack([0.5 * (y.u[:-1] + y.u[1:]), 0.5 * (y.v[:, :-1] + y.v[:, 1:])], axis=-1)


def lq_norm(y: StaggeredField, g: Grid, q: float) -> float:
    speed = np.linalg.norm(cell_velocity(y), axis=-1)
    return float((g.h ** 2 * np.sum(speed ** q)) ** (1.0 / q))


def discrete_stream_field(psi_nodes: np.ndarray, g: Grid) -> StaggeredField:
    """Discretely divergence-free field from node values of a stream function.

    ``u = d psi / dy``, ``v = -d psi / dx``; wall normal faces vanish when
    ``psi`` is zero on the boundary nodes.
    """
    psi = np.asarray(psi_nodes, float)
    if psi.shape != (g.nx + 1, g.ny + 1):
        raise ValueError("stream function must live on the (nx+1, ny+1) nodes")
    return StaggeredField(np.diff(psi, axis=1) / g.h, -np.diff(psi, axis=0) / g.h)


def _free_matrices(g: Grid):
    ops = operators(g)
    F = ops.free_idx
    grad = ops.grad[:, F]
    L = (grad.T @ sps.diags(ops.grad_w) @ grad).tocsc()
    Gf = ops.G[:, F]
    wq = np.full(3 * ops.n_q, ops.quad_weight)
    wq[2 * ops.n_q:] *= 2.0
    K = (Gf.T @ sps.diags(wq) @ Gf).tocsc()
    M = g.h ** 2 * sps.identity(len(F), format="csc")
    return L, K, M


@lru_cache(maxsize=32)
def estimate_poincare_korn(g: Grid, trials: int = 4, seed: int = 0, iterations: int = 60):
    """Estimate discrete Poincare and Korn constants (exponent 2).

    ``C1_hat = max ||y|| / ||grad y||`` over random wall-supported fields, each
    refined by power iteration with the inverse discrete Laplacian;
    ``C2_hat = min ||D y|| / ||y||_{1,2}`` over random fields, each refined by
    a shift-invert Lanczos solve of the matching generalized eigenproblem. Both values
    are attained by actual fields, so ``C1_hat`` bounds the sup from below and
    ``C2_hat`` bounds the inf from above.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    L, K, M = _free_matrices(g)
    n = L.shape[0]
    rng = np.random.default_rng(seed)
    lap = spla.splu(L)
    LM = (L + M).tocsc()
    c1, c2 = 0.0, np.inf
    for _ in range(trials):
        x = rng.standard_normal(n)
        z0 = rng.standard_normal(n)
        for _ in range(iterations):
            x = lap.solve(M @ x)
            x /= np.linalg.norm(x)
        c1 = max(c1, float(np.sqrt((x @ (M @ x)) / (x @ (L @ x)))))
        # the low end of the Korn spectrum is clustered; shift-invert Lanczos
        _, vec = spla.eigsh(K, k=1, M=LM, sigma=0.0, which="LM", v0=z0, tol=1e-10)
        z = vec[:, 0]
        c2 = min(c2, float(np.sqrt((z @ (K @ z)) / (z @ (LM @ z)))))
    return c1, c2
