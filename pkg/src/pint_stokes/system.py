"""All-at-once optimality system: matrix-free operator, right-hand side, benchmarks.

Unknowns are the velocity ``v``, pressure ``p``, adjoint velocity ``lam`` and
adjoint pressure ``mu`` at the interior time points ``t_j = j tau``,
``j = 1..n_t-1``, stored field-major (see :class:`~pint_stokes.linalg.BlockLayout`).
With ``E`` the backward-Euler difference matrix the operator reads::

    [ tau I(x)M      0        E^T(x)M + tau I(x)L^T   tau I(x)B^T ] [ v   ]
    [ 0              0        tau I(x)B               0           ] [ p   ]
    [ E(x)M + tau I(x)L   tau I(x)B^T   -(tau/beta) I(x)M   0     ] [ lam ]
    [ tau I(x)B      0        0                       0           ] [ mu  ]

The first row group is the discrete adjoint equation, the third the state
equation; the control has been eliminated through ``u = lam / beta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError, ConfigurationError
from .linalg import BlockLayout
from .mesh_fem import DiscreteOperators, load_vector
from .time_diag import TimeGrid, backward_euler_matrix, circulant_matrix

__all__ = [
    "ControlProblem",
    "AllAtOnceOperator",
    "build_rhs",
    "stokes_manufactured",
    "oseen_cavity",
    "cavity_wind",
    "nodal_velocity",
    "velocity_error",
]

VectorField = Callable[..., tuple]


@dataclass(frozen=True)
class ControlProblem:
    """Data of a distributed-control problem.

    Space-time fields are callables ``(x1, x2, t) -> (c1, c2)`` that accept
    numpy arrays; ``v0`` and ``wind`` take ``(x1, x2)`` only.
    """

    name: str
    beta: float
    nu: float
    grid: TimeGrid
    v_d: VectorField
    f: VectorField
    h: VectorField
    v0: Callable
    wind: Optional[Callable] = None
    exact_v: Optional[VectorField] = None
    exact_p: Optional[Callable] = None
    exact_lam: Optional[VectorField] = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be positive, got {self.beta}")
        if not self.nu > 0:
            raise ConfigurationError(f"nu must be positive, got {self.nu}")


class AllAtOnceOperator:
    """Matrix-free all-at-once operator on field-major vectors."""

    def __init__(self, ops: DiscreteOperators, grid: TimeGrid, beta: float):
        if not beta > 0:
            raise ConfigurationError(f"beta must be positive, got {beta}")
        self.ops = ops
        self.grid = grid
        self.beta = float(beta)
        self.tau = grid.tau
        self.layout = BlockLayout(grid.n_blocks, ops.n_v, ops.n_p)
        self._M = ops.M.tocsr()
        self._L = ops.L.tocsr()
        self._LT = ops.L.T.tocsr()
        self._B = ops.B.tocsr()
        self._BT = ops.B.T.tocsr()

    @property
    def shape(self):
        return (self.layout.size, self.layout.size)

    def __call__(self, x):
        return self.apply(x)

    def apply(self, x: np.ndarray) -> np.ndarray:
        lay, tau = self.layout, self.tau
        v, p, lam, mu = lay.fields(np.asarray(x))
        M, L, LT, B, BT = self._M, self._L, self._LT, self._B, self._BT

        def mul(A, X):  # apply A to every time slice of X (n_blocks, size)
            return (A @ X.T).T

        Mv = mul(M, v)
        Mlam = mul(M, lam)
        # (E^T lam)_j = lam_j - lam_{j+1};  (E v)_j = v_j - v_{j-1}
        Et_Mlam = Mlam.copy()
        Et_Mlam[:-1] -= Mlam[1:]
        E_Mv = Mv.copy()
        E_Mv[1:] -= Mv[:-1]

        out = np.empty(lay.size, dtype=np.result_type(x, np.float64))
        ov, op, olam, omu = lay.fields(out)
        ov[...] = tau * Mv + Et_Mlam + tau * mul(LT, lam) + tau * mul(BT, mu)
        op[...] = tau * mul(B, lam)
        olam[...] = E_Mv + tau * mul(L, v) + tau * mul(BT, p) - (tau / self.beta) * Mlam
        omu[...] = tau * mul(B, v)
        return out

    def to_sparse(self, circulant: bool = False) -> sp.csr_matrix:
        """Explicit Kronecker assembly (desk-scale oracle).

        With ``circulant=True`` the difference matrix is replaced by its
        periodic version, which gives the block-circulant preconditioner.
        """
        n, tau = self.grid.n_blocks, self.tau
        It = sp.identity(n, format="csr")
        E = sp.csr_matrix(circulant_matrix(n) if circulant else backward_euler_matrix(n))
        o = self.ops
        kron = sp.kron
        blocks = [
            [tau * kron(It, o.M), None, kron(E.T, o.M) + tau * kron(It, o.L.T), tau * kron(It, o.B.T)],
            [None, None, tau * kron(It, o.B), None],
            [kron(E, o.M) + tau * kron(It, o.L), tau * kron(It, o.B.T),
             -(tau / self.beta) * kron(It, o.M), None],
            [tau * kron(It, o.B), None, None, None],
        ]
        nv, np_ = n * o.n_v, n * o.n_p
        sizes = [nv, np_, nv, np_]
        # fill empty diagonal slots so bmat can infer shapes
        for i in range(4):
            if blocks[i][i] is None:
                blocks[i][i] = sp.csr_matrix((sizes[i], sizes[i]))
        return sp.bmat(blocks, format="csr")

    def to_dense(self, circulant: bool = False) -> np.ndarray:
        return self.to_sparse(circulant).toarray()


# ---------------------------------------------------------------------------
# right-hand side

def _nodal(grid, func, *args):
    """Nodal values of a vector field on all Q2 nodes, component-major."""
    xy = grid.coordinates(2)
    a, b = func(xy[:, 0], xy[:, 1], *args)
    out = np.concatenate([np.broadcast_to(a, xy.shape[:1]),
                          np.broadcast_to(b, xy.shape[:1])]).astype(float)
    if not np.all(np.isfinite(out)):
        raise AssemblyError("non-finite problem data at mesh nodes")
    return out


def nodal_velocity(ops: DiscreteOperators, func: VectorField, t: float) -> np.ndarray:
    """Interpolate ``func(., ., t)`` onto the interior velocity DOFs."""
    return _nodal(ops.grid, func, t)[ops.vel_interior]


def build_rhs(problem: ControlProblem, ops: DiscreteOperators) -> np.ndarray:
    """Right-hand side in the field-major layout.

    Dirichlet data enters through the boundary columns of ``M``, ``L`` and
    ``B``; the initial state enters the first state row; the terminal adjoint
    condition is homogeneous and contributes nothing.
    """
    tg = problem.grid
    tau = tg.tau
    lay = BlockLayout(tg.n_blocks, ops.n_v, ops.n_p)
    rhs = lay.zeros()
    r_v, r_p, r_lam, r_mu = lay.fields(rhs)
    I, Bd = ops.vel_interior, ops.vel_boundary
    M_IB = ops.full["M"][I][:, Bd]
    L_IB = ops.full["L"][I][:, Bd]
    B_pB = ops.full["B"][:, Bd]
    grid = ops.grid

    g_prev = _nodal(grid, problem.h, 0.0)[Bd]
    v0 = _nodal(grid, lambda x1, x2: problem.v0(x1, x2))[I]
    for j, t in enumerate(tg.times()):
        g = _nodal(grid, problem.h, t)[Bd]
        r_v[j] = tau * load_vector(grid, problem.v_d, t)[I] - tau * (M_IB @ g)
        r_lam[j] = (tau * load_vector(grid, problem.f, t)[I]
                    - M_IB @ (g - g_prev) - tau * (L_IB @ g))
        r_mu[j] = -tau * (B_pB @ g)
        g_prev = g
    r_lam[0] += ops.M @ v0
    return rhs


def velocity_error(problem: ControlProblem, ops: DiscreteOperators, x: np.ndarray) -> float:
    """Relative discrete ``L2(0,T; L2)`` error of the velocity against the exact field."""
    if problem.exact_v is None:
        raise ConfigurationError(f"problem {problem.name!r} has no exact solution")
    lay = BlockLayout(problem.grid.n_blocks, ops.n_v, ops.n_p)
    v = lay.fields(x)[0]
    num = den = 0.0
    for j, t in enumerate(problem.grid.times()):
        ve = nodal_velocity(ops, problem.exact_v, t)
        e = v[j] - ve
        num += e @ (ops.M @ e)
        den += ve @ (ops.M @ ve)
    return float(np.sqrt(num / den))


# ---------------------------------------------------------------------------
# benchmark problems

def stokes_manufactured(beta: float, grid: TimeGrid, nu: float = 1.0) -> ControlProblem:
    """Stokes control problem with a known smooth solution.

    The state, pressure and adjoint are exact for ``nu = 1``; for other
    viscosities the same desired state and forcing are kept and the exact
    fields are dropped.
    """
    T = grid.T

    def v_d(x, y, t):
        e = np.exp(T - t)
        a = 4 * beta * y * (2 * (3 * x**2 - 1) * (y**2 - 1) + 3 * (x**2 - 1) ** 2)
        b = -4 * beta * x * (3 * (y**2 - 1) ** 2 + 2 * (x**2 - 1) * (3 * y**2 - 1))
        a = a + e * (20 * x * y**3 + 2 * beta * y * ((x**2 - 1) ** 2 * (y**2 - 7)
                                                    - 4 * (3 * x**2 - 1) * (y**2 - 1) + 2))
        b = b + e * (5 * (x**4 - y**4) - 2 * beta * x * ((y**2 - 1) ** 2 * (x**2 - 7)
                                                         - 4 * (x**2 - 1) * (3 * y**2 - 1) - 2))
        return a, b

    def f(x, y, t):
        e = np.exp(T - t)
        sx = 2 * y * (x**2 - 1) ** 2 * (y**2 - 1)
        sy = -2 * x * (x**2 - 1) * (y**2 - 1) ** 2
        return (e * (-20 * x * y**3 - sx) + sx,
                e * (5 * (y**4 - x**4) - sy) + sy)

    def v(x, y, t):
        e = np.exp(T - t)
        return e * 20 * x * y**3, e * (5 * x**4 - 5 * y**4)

    def p(x, y, t):
        return np.exp(T - t) * (60 * x**2 * y - 20 * y**3)

    def lam(x, y, t):
        s = beta * (np.exp(T - t) - 1.0)
        return (s * 2 * y * (x**2 - 1) ** 2 * (y**2 - 1),
                -s * 2 * x * (x**2 - 1) * (y**2 - 1) ** 2)

    exact = nu == 1.0
    return ControlProblem(
        name="stokes_manufactured", beta=beta, nu=nu, grid=grid,
        v_d=v_d, f=f, h=v, v0=lambda x, y: v(x, y, 0.0), wind=None,
        exact_v=v if exact else None, exact_p=p if exact else None,
        exact_lam=lam if exact else None,
    )


_A2 = (100.0 / 99.0) ** 2
_B2 = (100.0 / 49.0) ** 2


def _vortex_radius(x1, x2, centre):
    return 1.0 - np.sqrt(_B2 * (x1 - centre) ** 2 + _A2 * x2**2)


def cavity_wind(x1, x2):
    """Two counter-rotating elliptic vortices centred at ``(+-1/2, 0)``.

    Each vortex is ``c(x) * (a^2 x2, -b^2 (x1 - x_c))`` up to sign, with
    ``c`` the elliptic cone ``1 - sqrt(b^2 (x1 - x_c)^2 + a^2 x2^2)``.  That
    form is divergence-free, and it vanishes on the ellipse boundary, so the
    glued field is continuous and divergence-free everywhere.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    c1 = _vortex_radius(x1, x2, 0.5)
    c2 = _vortex_radius(x1, x2, -0.5)
    w1 = np.zeros(np.broadcast(x1, x2).shape)
    w2 = np.zeros_like(w1)
    m1 = c1 >= 0
    m2 = (c2 >= 0) & ~m1
    w1 = np.where(m1, c1 * _A2 * x2, w1)
    w2 = np.where(m1, -c1 * _B2 * (x1 - 0.5), w2)
    w1 = np.where(m2, -c2 * _A2 * x2, w1)
    w2 = np.where(m2, c2 * _B2 * (x1 + 0.5), w2)
    return w1, w2


def oseen_cavity(beta: float, grid: TimeGrid, nu: float = 1e-2) -> ControlProblem:
    """Lid-driven cavity with a two-vortex wind; no exact solution."""

    def v_d(x, y, t):
        q = (1 - x**4) * (1 - y**4)
        lid = np.where(y >= 0.8, 5 * y - 4, 0.0)
        return 2 * y * q + lid, -2 * x * q

    def f(x, y, t):
        return (-20 * x * y**3 - 2 * y * (x**2 - 1) ** 2 * (y**2 - 1),
                5 * (y**4 - x**4) + 2 * x * (x**2 - 1) * (y**2 - 1) ** 2)

    def h(x, y, t):
        top = np.isclose(y, 1.0)
        return np.where(top, 1.0, 0.0), np.zeros_like(np.asarray(y, dtype=float))

    def v0(x, y):
        inside = (x > -y) & (x < y)
        return np.where(inside, 1.0, 0.0), np.zeros_like(np.asarray(y, dtype=float))

    return ControlProblem(name="oseen_cavity", beta=beta, nu=nu, grid=grid,
                          v_d=v_d, f=f, h=h, v0=v0, wind=cavity_wind)
