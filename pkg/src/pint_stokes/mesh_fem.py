"""Structured Q2-Q1 (Taylor-Hood) discretization on the square [-1, 1]^2.

Level ``l`` of the hierarchy is a uniform grid of ``2**l x 2**l`` square
cells.  Velocity is biquadratic (9-node cells), pressure is bilinear
(4-node cells).  Nodes are numbered lexicographically with ``x1`` running
fastest, so node ``(ix, iy)`` of a grid with ``m`` nodes per side has index
``iy * m + ix``.

Velocity DOFs are ordered component-major: all ``x1``-components of the
interior nodes followed by all ``x2``-components.  Dirichlet DOFs are
eliminated, and the first pressure node (the corner ``(-1, -1)``) is pinned
by deleting its row and column.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import AssemblyError, ConfigurationError

__all__ = [
    "Grid",
    "MeshHierarchy",
    "DiscreteOperators",
    "TransferOperators",
    "build_hierarchy",
    "assemble_operators",
    "build_transfer",
    "load_vector",
    "OperatorHierarchy",
    "assemble_hierarchy",
    "export_matrix_market",
    "DOMAIN_MEASURE",
]

DOMAIN_MEASURE = 4.0
MAX_LEVEL = 8

# 3-point Gauss rule on [0, 1]
_GAUSS_X = np.array([0.5 - np.sqrt(0.15), 0.5, 0.5 + np.sqrt(0.15)])
_GAUSS_W = np.array([5.0, 8.0, 5.0]) / 18.0


def _lagrange_1d(degree: int, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the 1D Lagrange basis on [0, 1]."""
    xi = np.asarray(xi, dtype=float)
    if degree == 1:
        val = np.stack([1.0 - xi, xi])
        der = np.stack([-np.ones_like(xi), np.ones_like(xi)])
    elif degree == 2:
        val = np.stack([
            2.0 * (xi - 0.5) * (xi - 1.0),
            -4.0 * xi * (xi - 1.0),
            2.0 * xi * (xi - 0.5),
        ])
        der = np.stack([4.0 * xi - 3.0, -8.0 * xi + 4.0, 4.0 * xi - 1.0])
    else:
        raise ValueError(f"unsupported degree {degree}")
    return val, der


def _tensor_basis(degree: int):
    """Reference basis at the 3x3 Gauss points.

    Returns ``phi`` of shape (nq, nb), ``dphi`` of shape (nq, nb, 2) in
    reference coordinates and the quadrature weights ``w`` (nq,).  Both
    quadrature points and basis functions are numbered with x running
    fastest.
    """
    val, der = _lagrange_1d(degree, _GAUSS_X)  # (nb1, nq1)
    nb1 = degree + 1
    # q = qy * 3 + qx ; b = by * nb1 + bx
    phi = np.einsum("aq,bp->pqba", val, val).reshape(9, nb1 * nb1)
    dx = np.einsum("aq,bp->pqba", der, val).reshape(9, nb1 * nb1)
    dy = np.einsum("aq,bp->pqba", val, der).reshape(9, nb1 * nb1)
    dphi = np.stack([dx, dy], axis=-1)
    w = np.outer(_GAUSS_W, _GAUSS_W).reshape(9)
    qx = np.tile(_GAUSS_X, 3)
    qy = np.repeat(_GAUSS_X, 3)
    return phi, dphi, w, np.stack([qx, qy], axis=-1)


_PHI2, _DPHI2, _QW, _QPTS = _tensor_basis(2)
_PHI1, _DPHI1, _, _ = _tensor_basis(1)


@dataclass(frozen=True)
class Grid:
    """One uniform level of the hierarchy."""

    level: int

    @property
    def cells_per_side(self) -> int:
        return 2 ** self.level

    @property
    def h(self) -> float:
        return 2.0 / self.cells_per_side

    @property
    def n_cells(self) -> int:
        return self.cells_per_side ** 2

    def nodes_per_side(self, degree: int) -> int:
        return degree * self.cells_per_side + 1

    def coordinates(self, degree: int) -> np.ndarray:
        """Node coordinates, shape (n_nodes, 2), lexicographic in (x2, x1)."""
        m = self.nodes_per_side(degree)
        t = np.linspace(-1.0, 1.0, m)
        x1, x2 = np.meshgrid(t, t, indexing="xy")
        return np.stack([x1.ravel(), x2.ravel()], axis=-1)

    def connectivity(self, degree: int) -> np.ndarray:
        """Cell-to-node map, shape (n_cells, (degree+1)**2)."""
        n = self.cells_per_side
        m = self.nodes_per_side(degree)
        cx, cy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        cx, cy = cx.ravel(), cy.ravel()
        local = np.arange(degree + 1)
        bx, by = np.meshgrid(local, local, indexing="xy")
        bx, by = bx.ravel(), by.ravel()
        gx = degree * cx[:, None] + bx[None, :]
        gy = degree * cy[:, None] + by[None, :]
        return gy * m + gx

    def cell_origins(self) -> np.ndarray:
        n = self.cells_per_side
        cx, cy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        return np.stack([-1.0 + self.h * cx.ravel(), -1.0 + self.h * cy.ravel()], axis=-1)

    def quadrature_points(self) -> np.ndarray:
        """Physical Gauss points, shape (n_cells, 9, 2)."""
        return self.cell_origins()[:, None, :] + self.h * _QPTS[None, :, :]

    def boundary_mask(self, degree: int) -> np.ndarray:
        m = self.nodes_per_side(degree)
        ix = np.tile(np.arange(m), m)
        iy = np.repeat(np.arange(m), m)
        return (ix == 0) | (iy == 0) | (ix == m - 1) | (iy == m - 1)


@dataclass(frozen=True)
class MeshHierarchy:
    """Nested uniform grids; ``levels[0]`` is the coarsest."""

    levels: tuple[Grid, ...]

    @property
    def coarsest(self) -> int:
        return self.levels[0].level

    @property
    def finest(self) -> int:
        return self.levels[-1].level

    def grid(self, level: int) -> Grid:
        if not self.coarsest <= level <= self.finest:
            raise ConfigurationError(
                f"level {level} outside hierarchy [{self.coarsest}, {self.finest}]")
        return self.levels[level - self.coarsest]


def build_hierarchy(coarsest_level: int, finest_level: int) -> MeshHierarchy:
    if not (1 <= coarsest_level <= finest_level <= MAX_LEVEL):
        raise ConfigurationError(
            f"need 1 <= coarsest ({coarsest_level}) <= finest ({finest_level}) <= {MAX_LEVEL}")
    return MeshHierarchy(tuple(Grid(l) for l in range(coarsest_level, finest_level + 1)))


# ---------------------------------------------------------------------------
# assembly

def _scatter(conn_r: np.ndarray, conn_c: np.ndarray, elem: np.ndarray, shape) -> sp.csr_matrix:
    """Sum element matrices ``elem`` (n_cells, nr, nc) into a CSR matrix."""
    nr, nc = conn_r.shape[1], conn_c.shape[1]
    rows = np.repeat(conn_r[:, :, None], nc, axis=2).ravel()
    cols = np.repeat(conn_c[:, None, :], nr, axis=1).ravel()
    if elem.ndim == 2:
        elem = np.broadcast_to(elem, (conn_r.shape[0], nr, nc))
    A = sp.coo_matrix((elem.ravel(), (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def _reference_matrices(h: float) -> dict[str, np.ndarray]:
    w = _QW
    return {
        "M2": h * h * np.einsum("q,qi,qj->ij", w, _PHI2, _PHI2),
        "K2": np.einsum("q,qid,qjd->ij", w, _DPHI2, _DPHI2),
        "M1": h * h * np.einsum("q,qi,qj->ij", w, _PHI1, _PHI1),
        "K1": np.einsum("q,qid,qjd->ij", w, _DPHI1, _DPHI1),
        # -int psi_q d_c phi_j ; (nb1, nb2) per component
        "B0": -h * np.einsum("q,qi,qj->ij", w, _PHI1, _DPHI2[:, :, 0]),
        "B1": -h * np.einsum("q,qi,qj->ij", w, _PHI1, _DPHI2[:, :, 1]),
    }


def _evaluate_wind(grid: Grid, wind: Callable) -> np.ndarray:
    pts = grid.quadrature_points()
    wx, wy = wind(pts[..., 0], pts[..., 1])
    vals = np.stack([np.broadcast_to(wx, pts.shape[:2]),
                     np.broadcast_to(wy, pts.shape[:2])], axis=-1).astype(float)
    if not np.all(np.isfinite(vals)):
        raise AssemblyError("wind evaluation produced non-finite values")
    return vals


def _convection_elements(grid: Grid, wind_q: np.ndarray, phi, dphi) -> np.ndarray:
    """Skew-symmetric convection element matrices.

    ``N_ij = 1/2 int phi_i (w . grad phi_j) - phi_j (w . grad phi_i)``, which
    equals the standard form for divergence-free ``w`` with ``w.n = 0`` and
    makes ``N + N^T`` vanish to roundoff.
    """
    h = grid.h
    adv = np.einsum("q,qi,cqd,qjd->cij", _QW, phi, wind_q, dphi)
    return 0.5 * h * (adv - np.transpose(adv, (0, 2, 1)))


@dataclass
class DiscreteOperators:
    """Spatial matrices of one level after Dirichlet elimination and pinning.

    Reduced matrices act on interior velocity DOFs (``n_v``) and unpinned
    pressure DOFs (``n_p``).  ``full`` keeps the unreduced velocity matrices
    and ``B`` with all velocity columns, for boundary lifting.
    """

    level: int
    nu: float
    M: sp.csr_matrix
    K: sp.csr_matrix
    N: sp.csr_matrix
    L: sp.csr_matrix
    B: sp.csr_matrix
    Mp: sp.csr_matrix
    Kp: sp.csr_matrix
    Np: sp.csr_matrix
    Lp: sp.csr_matrix
    grid: Grid
    vel_interior: np.ndarray
    vel_boundary: np.ndarray
    p_free: np.ndarray
    full: dict = field(repr=False, default_factory=dict)

    @property
    def n_v(self) -> int:
        return self.M.shape[0]

    @property
    def n_p(self) -> int:
        return self.Mp.shape[0]

    @property
    def has_wind(self) -> bool:
        return self.N.nnz > 0

    def velocity_coordinates(self) -> np.ndarray:
        """Coordinates of the interior velocity nodes (one component)."""
        xy = self.grid.coordinates(2)
        n_nodes = xy.shape[0]
        return xy[self.vel_interior[: self.n_v // 2] % n_nodes]

    def pressure_coordinates(self) -> np.ndarray:
        return self.grid.coordinates(1)[self.p_free]


def assemble_operators(mesh: MeshHierarchy, level: int, nu: float,
                       wind: Optional[Callable] = None) -> DiscreteOperators:
    """Assemble all Q2-Q1 operators on ``level``.

    ``wind`` is ``None`` for Stokes or a callable ``(x1, x2) -> (w1, w2)``
    accepting arrays.
    """
    if not nu > 0:
        raise ConfigurationError(f"viscosity must be positive, got {nu}")
    grid = mesh.grid(level)
    ref = _reference_matrices(grid.h)
    c2 = grid.connectivity(2)
    c1 = grid.connectivity(1)
    n2 = grid.nodes_per_side(2) ** 2
    n1 = grid.nodes_per_side(1) ** 2

    Ms = _scatter(c2, c2, ref["M2"], (n2, n2))
    Ks = _scatter(c2, c2, ref["K2"], (n2, n2))
    Mp_full = _scatter(c1, c1, ref["M1"], (n1, n1))
    Kp_full = _scatter(c1, c1, ref["K1"], (n1, n1))
    Bx = _scatter(c1, c2, ref["B0"], (n1, n2))
    By = _scatter(c1, c2, ref["B1"], (n1, n2))
    if wind is not None:
        wq = _evaluate_wind(grid, wind)
        Ns = _scatter(c2, c2, _convection_elements(grid, wq, _PHI2, _DPHI2), (n2, n2))
        Np_full = _scatter(c1, c1, _convection_elements(grid, wq, _PHI1, _DPHI1), (n1, n1))
    else:
        Ns = sp.csr_matrix((n2, n2))
        Np_full = sp.csr_matrix((n1, n1))

    M_full = sp.block_diag([Ms, Ms], format="csr")
    K_full = sp.block_diag([Ks, Ks], format="csr")
    N_full = sp.block_diag([Ns, Ns], format="csr")
    L_full = (nu * K_full + N_full).tocsr()
    B_full = sp.hstack([Bx, By], format="csr")

    bmask = grid.boundary_mask(2)
    interior_nodes = np.flatnonzero(~bmask)
    boundary_nodes = np.flatnonzero(bmask)
    vel_int = np.concatenate([interior_nodes, interior_nodes + n2])
    vel_bnd = np.concatenate([boundary_nodes, boundary_nodes + n2])
    p_free = np.arange(1, n1)

    def red(A, r, c):
        return A[r][:, c].tocsr()

    M = red(M_full, vel_int, vel_int)
    K = red(K_full, vel_int, vel_int)
    N = red(N_full, vel_int, vel_int)
    Mp = red(Mp_full, p_free, p_free)
    Kp = red(Kp_full, p_free, p_free)
    Np = red(Np_full, p_free, p_free)
    ops = DiscreteOperators(
        level=level, nu=nu,
        M=M, K=K, N=N, L=(nu * K + N).tocsr(),
        B=red(B_full, p_free, vel_int),
        Mp=Mp, Kp=Kp, Np=Np, Lp=(nu * Kp + Np).tocsr(),
        grid=grid, vel_interior=vel_int, vel_boundary=vel_bnd, p_free=p_free,
        full={"M": M_full, "K": K_full, "N": N_full, "L": L_full,
              "B": B_full[p_free].tocsr(), "B_all": B_full,
              "Mp": Mp_full, "Kp": Kp_full},
    )
    return ops


def load_vector(grid: Grid, func: Callable, t: float) -> np.ndarray:
    """Velocity load ``int f . phi_i`` on all Q2 DOFs (unreduced, 2*n_nodes).

    ``func(x1, x2, t)`` returns the two components as arrays.
    """
    pts = grid.quadrature_points()
    fx, fy = func(pts[..., 0], pts[..., 1], t)
    vals = np.stack([np.broadcast_to(fx, pts.shape[:2]),
                     np.broadcast_to(fy, pts.shape[:2])]).astype(float)
    if not np.all(np.isfinite(vals)):
        raise AssemblyError("non-finite data in load vector")
    h2 = grid.h ** 2
    conn = grid.connectivity(2)
    n2 = grid.nodes_per_side(2) ** 2
    out = np.zeros(2 * n2)
    for c in range(2):
        elem = h2 * np.einsum("q,cq,qi->ci", _QW, vals[c], _PHI2)
        np.add.at(out, conn.ravel() + c * n2, elem.ravel())
    return out


# ---------------------------------------------------------------------------
# transfer

@dataclass(frozen=True)
class TransferOperators:
    """Prolongations from ``level`` to ``level + 1``; restriction is the transpose.

    ``P_vel_full``/``P_p_full`` act on all nodes; ``P_vel``/``P_p`` on the
    reduced (interior / unpinned) DOFs.
    """

    level: int
    P_vel_full: sp.csr_matrix
    P_p_full: sp.csr_matrix
    P_vel: sp.csr_matrix
    P_p: sp.csr_matrix

    def restrict_vel(self, r):
        return self.P_vel.T @ r

    def restrict_p(self, r):
        return self.P_p.T @ r


def _interp_1d(degree: int, n_coarse_cells: int) -> sp.csr_matrix:
    """1D nodal interpolation from n cells to 2n cells."""
    mc = degree * n_coarse_cells + 1
    mf = 2 * degree * n_coarse_cells + 1
    rows, cols, vals = [], [], []
    for fi in range(mf):
        e = min(fi // (2 * degree), n_coarse_cells - 1)
        xi = (fi - 2 * degree * e) / (2.0 * degree)
        val, _ = _lagrange_1d(degree, np.array([xi]))
        for a in range(degree + 1):
            if abs(val[a, 0]) > 1e-15:
                rows.append(fi)
                cols.append(degree * e + a)
                vals.append(val[a, 0])
    return sp.csr_matrix((vals, (rows, cols)), shape=(mf, mc))


def build_transfer(mesh: MeshHierarchy, level: int) -> TransferOperators:
    if not mesh.coarsest <= level < mesh.finest:
        raise ConfigurationError(f"no finer level above {level}")
    coarse = mesh.grid(level)
    fine = mesh.grid(level + 1)
    n = coarse.cells_per_side
    P2 = _interp_1d(2, n)
    P1 = _interp_1d(1, n)
    # node index = iy * m + ix  ->  kron(P_y, P_x)
    P2d = sp.kron(P2, P2, format="csr")
    P1d = sp.kron(P1, P1, format="csr")
    Pv_full = sp.block_diag([P2d, P2d], format="csr")

    def interior(grid):
        bm = grid.boundary_mask(2)
        nodes = np.flatnonzero(~bm)
        n2 = bm.size
        return np.concatenate([nodes, nodes + n2])

    Pv = Pv_full[interior(fine)][:, interior(coarse)].tocsr()
    Pp = P1d[1:][:, 1:].tocsr()
    return TransferOperators(level, Pv_full, P1d, Pv, Pp)


def export_matrix_market(path, A, comment: str = "") -> None:
    """Write a sparse matrix in MatrixMarket coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


@dataclass
class OperatorHierarchy:
    """Operators on every level of a mesh hierarchy plus reduced prolongations.

    ``ops[i]`` belongs to ``mesh.levels[i]``; ``P_vel[i]``/``P_p[i]`` map level
    ``i`` to ``i + 1``.  The finest level is ``ops[-1]``.
    """

    mesh: MeshHierarchy
    ops: list
    P_vel: list
    P_p: list

    @property
    def finest(self) -> DiscreteOperators:
        return self.ops[-1]


def assemble_hierarchy(coarsest_level: int, finest_level: int, nu: float,
                       wind: Optional[Callable] = None) -> OperatorHierarchy:
    mesh = build_hierarchy(coarsest_level, finest_level)
    ops = [assemble_operators(mesh, g.level, nu, wind) for g in mesh.levels]
    transfers = [build_transfer(mesh, g.level) for g in mesh.levels[:-1]]
    return OperatorHierarchy(mesh, ops, [t.P_vel for t in transfers], [t.P_p for t in transfers])
