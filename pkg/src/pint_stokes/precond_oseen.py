"""Block preconditioner for the Oseen control problem.

With convection, ``L`` is not symmetric and the ``Z_j`` transform of the
Stokes path is unavailable, so each transformed block ``G_j`` is
preconditioned directly by the block lower-triangular matrix::

    P_j = [ P11        0  ]      P11 = [ tau M   K^H           ]
          [ tau Bb    -S  ]            [ K       -(tau/beta) M ],   K = d_j M + tau L

with ``Bb`` the swapped divergence pair ``(p, mu) <- (B lam, B v)``.

The (1,1) block is applied by a fixed number of inexact Uzawa steps.  Its
Schur complement is approximated as ``tau^{-1} Q M^{-1} Q^H`` with
``Q = (d_j + tau/sqrt(beta)) M + tau L``, whose spectrum relative to the
exact one lies in ``[1/2, 1]``; the Uzawa step ``1/mu`` with ``mu = 3/4``
puts the multiplier error contraction at ``1/3`` per step.  The pressure
Schur approximation ``S`` uses the commutator of the pressure-space
operators ``M_p``, ``K_p`` and ``L_p = nu K_p + N_p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError
from .inner_solvers import (ChebyshevPlan, InnerSettings, MultigridPlan, build_chebyshev,
                            chebyshev_apply, mg_vcycle_apply)
from .krylov import KrylovConfig, gmres
from .linalg import BlockLayout, SparseMatrix
from .mesh_fem import DiscreteOperators, OperatorHierarchy
from .precond_stokes import BlockMap, PrecondStats, apply_Gj
from .time_diag import TimeGrid, circulant_block_solve, circulant_spectrum

__all__ = [
    "OseenBlockContext",
    "apply_P11_uzawa",
    "apply_schur_oseen_inv",
    "apply_Puz_inv",
    "OseenPreconditioner",
    "apply_nonlinear_precond_oseen",
    "assemble_P11",
    "shifted_mass_schur_dense",
    "schur_oseen_inv_dense",
    "assemble_Puz",
]


def _shift(d, tau, beta):
    return complex(d) + tau / np.sqrt(beta)


@dataclass
class OseenBlockContext:
    index: int
    d: complex
    tau: float
    beta: float
    nu: float
    ops: DiscreteOperators
    uzawa_iters: int = 6
    uzawa_mu: float = 0.75
    Q_plan: Optional[MultigridPlan] = None
    QH_plan: Optional[MultigridPlan] = None
    M_plan: Optional[ChebyshevPlan] = None
    Kp_plan: Optional[MultigridPlan] = None
    Mp_plan: Optional[ChebyshevPlan] = None
    _opcache: dict = field(default_factory=dict, repr=False)

    @property
    def n_v(self) -> int:
        return self.ops.n_v

    @property
    def n_p(self) -> int:
        return self.ops.n_p

    def split(self, x):
        nv, np_ = self.n_v, self.n_p
        return x[:nv], x[nv:2 * nv], x[2 * nv:2 * nv + np_], x[2 * nv + np_:]

    def mat(self, name: str) -> SparseMatrix:
        return self._opcache[name]

    @classmethod
    def build(cls, index: int, d, tau: float, beta: float, hierarchy: OperatorHierarchy,
              settings: InnerSettings = InnerSettings(),
              shared: Optional[dict] = None) -> "OseenBlockContext":
        ops = hierarchy.finest
        shared = {} if shared is None else shared
        if "ops" not in shared:
            o = ops
            shared["ops"] = {k: SparseMatrix.from_scipy(v) for k, v in {
                "M": o.M, "L": o.L, "LT": o.L.T, "B": o.B, "BT": o.B.T,
                "Mp": o.Mp, "Kp": o.Kp, "Lp": o.Lp, "LpT": o.Lp.T}.items()}
            shared["Kp_plan"] = settings.multigrid([o.Kp for o in hierarchy.ops], hierarchy.P_p)
            shared["Mp_plan"] = build_chebyshev(ops.Mp, "Q1", settings.chebyshev_iters)
            shared["M_plan"] = build_chebyshev(ops.M, "Q2", settings.chebyshev_iters)
        s = _shift(d, tau, beta)
        Qs = [s * o.M + tau * o.L for o in hierarchy.ops]
        QHs = [np.conj(s) * o.M + tau * o.L.T for o in hierarchy.ops]
        return cls(index=index, d=complex(d), tau=tau, beta=beta, nu=ops.nu, ops=ops,
                   uzawa_iters=settings.uzawa_iters, uzawa_mu=settings.uzawa_mu,
                   Q_plan=settings.multigrid(Qs, hierarchy.P_vel),
                   QH_plan=settings.multigrid(QHs, hierarchy.P_vel),
                   M_plan=shared["M_plan"], Kp_plan=shared["Kp_plan"],
                   Mp_plan=shared["Mp_plan"], _opcache=shared["ops"])


def _pw_schur_inv(ctx, r):
    """``tau Q^{-H} M Q^{-1} r`` with one MG application per factor."""
    y = mg_vcycle_apply(ctx.Q_plan, r)
    return ctx.tau * mg_vcycle_apply(ctx.QH_plan, ctx.mat("M") @ y)


def apply_P11_uzawa(ctx, b1, b2):
    """Fixed-count inexact Uzawa for the velocity/adjoint-velocity block."""
    M, L, LT = ctx.mat("M"), ctx.mat("L"), ctx.mat("LT")
    tau, d = ctx.tau, ctx.d
    dtype = np.result_type(b1, b2, complex(d))
    x1 = np.zeros(ctx.n_v, dtype=dtype)
    x2 = np.zeros(ctx.n_v, dtype=dtype)
    for _ in range(ctx.uzawa_iters):
        Mx2 = M @ x2
        r1 = b1 - tau * (M @ x1) - (np.conj(d) * Mx2 + tau * (LT @ x2))
        x1 = x1 + chebyshev_apply(ctx.M_plan, r1) / tau
        r2 = b2 - (d * (M @ x1) + tau * (L @ x1)) + (tau / ctx.beta) * Mx2
        x2 = x2 - _pw_schur_inv(ctx, r2) / ctx.uzawa_mu
    return x1, x2


def apply_schur_oseen_inv(ctx, r3, r4):
    """Commutator approximation of the inverse pressure Schur complement."""
    Mp, Lp, LpT = ctx.mat("Mp"), ctx.mat("Lp"), ctx.mat("LpT")
    tau, d = ctx.tau, ctx.d
    u3 = chebyshev_apply(ctx.Mp_plan, r4) / tau
    u4 = chebyshev_apply(ctx.Mp_plan, r3) / tau
    Mu3, Mu4 = Mp @ u3, Mp @ u4
    z3 = tau * Mu3 + np.conj(d) * Mu4 + tau * (LpT @ u4)
    z4 = d * Mu3 + tau * (Lp @ u3) - (tau / ctx.beta) * Mu4
    return mg_vcycle_apply(ctx.Kp_plan, z4) / tau, mg_vcycle_apply(ctx.Kp_plan, z3) / tau


def apply_Puz_inv(ctx, r):
    r1, r2, r3, r4 = ctx.split(np.asarray(r))
    y1, y2 = apply_P11_uzawa(ctx, r1, r2)
    B = ctx.mat("B")
    s3 = r3 - ctx.tau * (B @ y2)
    s4 = r4 - ctx.tau * (B @ y1)
    y3, y4 = apply_schur_oseen_inv(ctx, s3, s4)
    return np.concatenate([y1, y2, -y3, -y4])


# ---------------------------------------------------------------------------
# dense oracles

def _dense(A):
    return A.toarray() if hasattr(A, "toarray") else np.asarray(A)


def assemble_P11(ops: DiscreteOperators, d, tau: float, beta: float) -> np.ndarray:
    M, L = _dense(ops.M), _dense(ops.L)
    K = complex(d) * M + tau * L
    return np.block([[tau * M + 0j, K.conj().T], [K, -(tau / beta) * M]])


def shifted_mass_schur_dense(ops: DiscreteOperators, d, tau: float, beta: float):
    """Return ``(S, S_hat)``: the negated exact Schur complement of the (1,1)
    block and its approximation ``tau^{-1} Q M^{-1} Q^H``."""
    M, L = _dense(ops.M), _dense(ops.L)
    K = complex(d) * M + tau * L
    S = (K @ np.linalg.solve(M, K.conj().T) + (tau**2 / beta) * M) / tau
    Q = _shift(d, tau, beta) * M + tau * L
    S_hat = Q @ np.linalg.solve(M, Q.conj().T) / tau
    return S, S_hat


def schur_oseen_inv_dense(ops: DiscreteOperators, d, tau: float, beta: float) -> np.ndarray:
    Mp, Kp, Lp = _dense(ops.Mp), _dense(ops.Kp), _dense(ops.Lp)
    d = complex(d)
    Z = np.zeros_like(Mp)
    X = np.block([[tau * Mp + 0j, np.conj(d) * Mp + tau * Lp.T],
                  [d * Mp + tau * Lp, -(tau / beta) * Mp]])
    AM = np.block([[Z, tau * Mp], [tau * Mp, Z]])
    AK = np.block([[Z, tau * Kp], [tau * Kp, Z]])
    return np.linalg.solve(AK, X) @ np.linalg.inv(AM)


def assemble_Puz(ops: DiscreteOperators, d, tau: float, beta: float) -> np.ndarray:
    """Dense block-triangular preconditioner with exact (1,1) and Schur pieces."""
    nv, np_ = ops.n_v, ops.n_p
    B = _dense(ops.B)
    P11 = assemble_P11(ops, d, tau, beta)
    S = np.linalg.inv(schur_oseen_inv_dense(ops, d, tau, beta))
    Bb = np.block([[np.zeros((np_, nv)), tau * B], [tau * B, np.zeros((np_, nv))]])
    return np.block([[P11, np.zeros((2 * nv, 2 * np_))], [Bb, -S]])


# ---------------------------------------------------------------------------
# all-at-once

class OseenPreconditioner:
    """Nonlinear block-circulant preconditioner: inner GMRES on every ``G_j``."""

    mode = "nonlinear"

    def __init__(self, hierarchy: OperatorHierarchy, grid: TimeGrid, beta: float,
                 settings: InnerSettings = InnerSettings(), block_map: Optional[BlockMap] = None):
        self.hierarchy = hierarchy
        self.ops = hierarchy.finest
        self.grid = grid
        self.beta = beta
        self.settings = settings
        self.block_map = block_map
        self.layout = BlockLayout(grid.n_blocks, self.ops.n_v, self.ops.n_p)
        self.spectrum = circulant_spectrum(grid)
        n = grid.n_blocks
        # conjugate blocks are mirrored, so their plans are never needed
        needed = range(n // 2 + 1) if settings.use_conjugate_symmetry else range(n)
        shared: dict = {}
        self.contexts = [None] * n
        for j in needed:
            self.contexts[j] = OseenBlockContext.build(j, self.spectrum.d[j], grid.tau, beta,
                                                       hierarchy, settings, shared)
        self.stats = PrecondStats()
        self._inner_cfg = KrylovConfig(tol=settings.inner_tol, restart=settings.inner_cap,
                                       max_iters=settings.inner_cap, record_history=False)

    def _solve(self, j, rj):
        ctx = self.contexts[j]
        res = gmres(lambda y: apply_Gj(ctx, y), lambda y: apply_Puz_inv(ctx, y), rj,
                    self._inner_cfg)
        return res.x, {"iterations": res.iterations, "converged": res.converged}

    def apply(self, r):
        y, infos, timings = circulant_block_solve(
            r, self.layout, self._solve, self.block_map, self.settings.use_conjugate_symmetry)
        self.stats.record(infos, timings, float(np.linalg.norm(r)))
        return y

    __call__ = apply


def apply_nonlinear_precond_oseen(precond: OseenPreconditioner, r, eps: Optional[float] = None):
    if eps is not None:
        if not 0 < eps < 1:
            raise ConfigurationError(f"inner tolerance must lie in (0, 1), got {eps}")
        cap = precond.settings.inner_cap
        precond._inner_cfg = KrylovConfig(tol=eps, restart=cap, max_iters=cap,
                                          record_history=False)
    return precond.apply(r)
