"""Block-circulant preconditioners for the Stokes control problem.

After the time FFT the circulant preconditioner splits into independent
complex blocks ``G_j`` (unknown order ``v, lam, p, mu``)::

    G_j = [ tau M          conj(d_j) M + tau L   0        tau B^T ]
          [ d_j M + tau L  -(tau/beta) M         tau B^T  0       ]
          [ 0              tau B                 0        0       ]
          [ tau B          0                     0        0       ]

Each block factors as ``G_j = T_l Z_j T_r`` with ``T_r = T_l^H`` and the real
symmetric saddle-point matrix::

    Z_j = [ M   A   0    B^T ]      A = c1 M + c2 L
          [ A  -M   B^T  0   ]
          [ 0   B   0    0   ]
          [ B   0   0    0   ]

``T_l`` acts on the velocity pair ``(v, lam)`` and on the pressure pair
``(p, mu)`` by 2x2 scalar matrices, so every transform is a few axpys.
``Z_j`` is preconditioned block-diagonally by ``diag(W, W, S, S)`` with
``W = (1 + c1) M + c2 L`` and ``S`` either exact (``B W^{-1} B^T``) or the
commutator approximation with ``S^{-1} = (1 + c1) K_p^{-1} + nu c2 M_p^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigurationError
from .inner_solvers import (ChebyshevPlan, InnerSettings, MultigridPlan, build_chebyshev,
                            chebyshev_apply, mg_vcycle_apply)
from .krylov import KrylovConfig, gmres
from .linalg import BlockLayout, DenseLU, SparseMatrix
from .mesh_fem import DiscreteOperators, OperatorHierarchy
from .time_diag import CirculantSpectrum, TimeGrid, circulant_block_solve, circulant_spectrum

__all__ = [
    "block_constants",
    "transform_factors",
    "StokesBlockContext",
    "apply_Tl", "apply_Tr", "apply_Tl_inv", "apply_Tr_inv",
    "apply_Gj", "apply_Zj",
    "apply_Phat_inv", "apply_Ptilde_inv",
    "assemble_Gj", "assemble_Zj", "assemble_T", "assemble_Phat", "assemble_Ptilde",
    "StokesPreconditioner",
    "apply_linear_precond", "apply_nonlinear_precond",
    "DENSE_BLOCK_LIMIT",
]

DENSE_BLOCK_LIMIT = 2000


def block_constants(d, tau: float, beta: float) -> tuple[float, float]:
    """Real constants ``(c1, c2)`` of the factorization ``G_j = T_l Z_j T_r``.

    ``c2 = 1 / sqrt(1/beta + d_c^2 / tau^2)`` and ``c1 = c2 d_r / tau``; the
    second is the same as ``d_r / sqrt(tau^2/beta + d_c^2)``.
    """
    if not (tau > 0 and beta > 0):
        raise ConfigurationError("tau and beta must be positive")
    d = complex(d)
    c2 = 1.0 / np.sqrt(1.0 / beta + (d.imag / tau) ** 2)
    c1 = d.real / np.sqrt(tau**2 / beta + d.imag**2)
    return float(c1), float(c2)


def transform_factors(d, tau: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """The 2x2 scalar factors of ``T_l`` on the velocity and pressure pairs."""
    d = complex(d)
    _, c2 = block_constants(d, tau, beta)
    if c2 == 0:
        raise ConfigurationError("degenerate block constant c2 = 0")
    a = np.sqrt(tau)
    delta = np.sqrt(tau) / c2
    gamma = 1j * d.imag / np.sqrt(tau)
    Tv = np.array([[a, 0.0], [gamma, delta]], dtype=complex)
    # T_r pressure part = tau J Tv^{-1} J, T_l pressure part is its adjoint
    J = np.array([[0.0, 1.0], [1.0, 0.0]])
    Sr = tau * J @ np.linalg.inv(Tv) @ J
    return Tv, Sr.conj().T


# ---------------------------------------------------------------------------
# per-block context

@dataclass
class StokesBlockContext:
    """Everything needed to apply the preconditioner of one time block."""

    index: int
    d: complex
    tau: float
    beta: float
    nu: float
    c1: float
    c2: float
    ops: DiscreteOperators
    Tv: np.ndarray
    Tp: np.ndarray
    W: Optional[SparseMatrix] = None
    W_plan: Optional[MultigridPlan] = None
    Kp_plan: Optional[MultigridPlan] = None
    Mp_plan: Optional[ChebyshevPlan] = None
    _mats: dict = field(default_factory=dict, repr=False)
    _opcache: dict = field(default_factory=dict, repr=False)

    @property
    def n_v(self) -> int:
        return self.ops.n_v

    @property
    def n_p(self) -> int:
        return self.ops.n_p

    @property
    def block_size(self) -> int:
        return 2 * (self.n_v + self.n_p)

    def split(self, x):
        nv, np_ = self.n_v, self.n_p
        return x[:nv], x[nv:2 * nv], x[2 * nv:2 * nv + np_], x[2 * nv + np_:]

    def mat(self, name: str) -> SparseMatrix:
        """Kernel-ready copies of the finest-level operators (filled at build time)."""
        return self._opcache[name]

    @classmethod
    def build(cls, index: int, d, tau: float, beta: float, ops: DiscreteOperators,
              hierarchy: Optional[OperatorHierarchy] = None,
              settings: InnerSettings = InnerSettings(),
              shared: Optional[dict] = None) -> "StokesBlockContext":
        """Set up constants, transforms and (with a hierarchy) the inner plans.

        ``shared`` may carry plans reused across blocks: ``Kp_plan``,
        ``Mp_plan`` and a dict ``W_plans`` keyed by ``(c1, c2)``.
        """
        c1, c2 = block_constants(d, tau, beta)
        Tv, Tp = transform_factors(d, tau, beta)
        shared = {} if shared is None else shared
        if "ops" not in shared:
            o = ops
            shared["ops"] = {k: SparseMatrix.from_scipy(v) for k, v in {
                "M": o.M, "L": o.L, "LT": o.L.T, "B": o.B, "BT": o.B.T,
                "Mp": o.Mp, "Kp": o.Kp, "Lp": o.Lp, "LpT": o.Lp.T}.items()}
        ctx = cls(index=index, d=complex(d), tau=tau, beta=beta, nu=ops.nu,
                  c1=c1, c2=c2, ops=ops, Tv=Tv, Tp=Tp, _opcache=shared["ops"])
        ctx.W = SparseMatrix.from_scipy((1 + c1) * ops.M + c2 * ops.L)
        # inverses of the 2x2 transform factors, fixed before any threaded use
        ctx._mats["Tl_inv"] = (np.linalg.inv(Tv), np.linalg.inv(Tp))
        ctx._mats["Tr_inv"] = (np.linalg.inv(Tv.conj().T), np.linalg.inv(Tp.conj().T))
        if hierarchy is not None:
            if "Kp_plan" not in shared:
                shared["Kp_plan"] = settings.multigrid([o.Kp for o in hierarchy.ops], hierarchy.P_p)
                shared["Mp_plan"] = build_chebyshev(ops.Mp, "Q1", settings.chebyshev_iters)
            wp = shared.setdefault("W_plans", {})
            key = (round(c1, 14), round(c2, 14))
            if key not in wp:
                wp[key] = settings.multigrid(
                    [(1 + c1) * o.M + c2 * o.L for o in hierarchy.ops], hierarchy.P_vel)
            ctx.W_plan = wp[key]
            ctx.Kp_plan = shared["Kp_plan"]
            ctx.Mp_plan = shared["Mp_plan"]
        return ctx


# ---------------------------------------------------------------------------
# transforms and block operators

def _pairwise(T, a, b):
    return T[0, 0] * a + T[0, 1] * b, T[1, 0] * a + T[1, 1] * b


def _apply_T(ctx, x, Tv, Tp):
    v, lam, p, mu = ctx.split(np.asarray(x))
    v2, lam2 = _pairwise(Tv, v, lam)
    p2, mu2 = _pairwise(Tp, p, mu)
    return np.concatenate([v2, lam2, p2, mu2])


def apply_Tl(ctx, x):
    return _apply_T(ctx, x, ctx.Tv, ctx.Tp)


def apply_Tr(ctx, x):
    return _apply_T(ctx, x, ctx.Tv.conj().T, ctx.Tp.conj().T)


def apply_Tl_inv(ctx, r):
    return _apply_T(ctx, r, *ctx._mats["Tl_inv"])


def apply_Tr_inv(ctx, r):
    return _apply_T(ctx, r, *ctx._mats["Tr_inv"])


def apply_Gj(ctx, x):
    """Matrix-free ``G_j x`` (also valid for non-symmetric ``L``)."""
    v, lam, p, mu = ctx.split(np.asarray(x))
    M, L, LT, B, BT = (ctx.mat(k) for k in ("M", "L", "LT", "B", "BT"))
    tau, d = ctx.tau, ctx.d
    Mv, Mlam = M @ v, M @ lam
    return np.concatenate([
        tau * Mv + np.conj(d) * Mlam + tau * (LT @ lam) + tau * (BT @ mu),
        d * Mv + tau * (L @ v) - (tau / ctx.beta) * Mlam + tau * (BT @ p),
        tau * (B @ lam),
        tau * (B @ v),
    ])


def apply_Zj(ctx, x):
    v, lam, p, mu = ctx.split(np.asarray(x))
    M, L, B, BT = (ctx.mat(k) for k in ("M", "L", "B", "BT"))
    Mv, Mlam = M @ v, M @ lam
    Av = ctx.c1 * Mv + ctx.c2 * (L @ v)
    Alam = ctx.c1 * Mlam + ctx.c2 * (L @ lam)
    return np.concatenate([Mv + Alam + BT @ mu, Av - Mlam + BT @ p, B @ lam, B @ v])


def _schur_hat_inv(ctx, r):
    """``S^{-1} r = (1 + c1) K_p^{-1} r + nu c2 M_p^{-1} r`` with MG and Chebyshev."""
    return ((1 + ctx.c1) * mg_vcycle_apply(ctx.Kp_plan, r)
            + ctx.nu * ctx.c2 * chebyshev_apply(ctx.Mp_plan, r))


def apply_Ptilde_inv(ctx, r):
    """Practical block-diagonal preconditioner for ``Z_j``; a fixed linear map."""
    if ctx.W_plan is None:
        raise ConfigurationError("block context was built without inner solver plans")
    v, lam, p, mu = ctx.split(np.asarray(r))
    return np.concatenate([mg_vcycle_apply(ctx.W_plan, v), mg_vcycle_apply(ctx.W_plan, lam),
                           _schur_hat_inv(ctx, p), _schur_hat_inv(ctx, mu)])


def _dense_guard(ctx):
    if ctx.n_v > DENSE_BLOCK_LIMIT:
        raise ConfigurationError(
            f"dense block path refused: n_v = {ctx.n_v} exceeds {DENSE_BLOCK_LIMIT}")


def _factor_dense(ctx, variant):
    """Factorizations for the dense verification variants, computed once."""
    _dense_guard(ctx)
    if variant == "phat" and "Phat" not in ctx._mats:
        W = ctx.W.toarray()
        B = ctx.ops.B.toarray()
        S = B @ np.linalg.solve(W, B.T)
        ctx._mats["Phat"] = (DenseLU(W), DenseLU(S))
    if variant == "exact" and "Zlu" not in ctx._mats:
        ctx._mats["Zlu"] = DenseLU(assemble_Zj(ctx.ops, ctx.c1, ctx.c2))


def apply_Phat_inv(ctx, r):
    """Exact ``diag(W, W, B W^{-1} B^T, B W^{-1} B^T)^{-1} r`` (verification only)."""
    _factor_dense(ctx, "phat")
    W_lu, S_lu = ctx._mats["Phat"]
    v, lam, p, mu = ctx.split(np.asarray(r))
    return np.concatenate([W_lu.solve(v), W_lu.solve(lam), S_lu.solve(p), S_lu.solve(mu)])


def _apply_Zj_inv_dense(ctx, r):
    """Exact ``Z_j^{-1} r`` by dense LU (verification only)."""
    _factor_dense(ctx, "exact")
    return ctx._mats["Zlu"].solve(np.asarray(r))


# ---------------------------------------------------------------------------
# dense assembly (desk-scale oracles)

def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A)


def assemble_Gj(ops: DiscreteOperators, d, tau: float, beta: float) -> np.ndarray:
    M, L, B = _dense(ops.M), _dense(ops.L), _dense(ops.B)
    Zp = np.zeros((ops.n_p, ops.n_p))
    Zvp = np.zeros((ops.n_v, ops.n_p))
    d = complex(d)
    return np.block([
        [tau * M + 0j, np.conj(d) * M + tau * L.T, Zvp, tau * B.T],
        [d * M + tau * L, -(tau / beta) * M, tau * B.T, Zvp],
        [Zvp.T, tau * B, Zp, Zp],
        [tau * B, Zvp.T, Zp, Zp],
    ])


def assemble_Zj(ops: DiscreteOperators, c1: float, c2: float) -> np.ndarray:
    M, L, B = _dense(ops.M), _dense(ops.L), _dense(ops.B)
    A = c1 * M + c2 * L
    Zvp = np.zeros((ops.n_v, ops.n_p))
    Zp = np.zeros((ops.n_p, ops.n_p))
    return np.block([[M, A, Zvp, B.T], [A, -M, B.T, Zvp], [Zvp.T, B, Zp, Zp], [B, Zvp.T, Zp, Zp]])


def assemble_T(ops: DiscreteOperators, d, tau: float, beta: float) -> np.ndarray:
    """Dense ``T_l``; ``T_r`` is its conjugate transpose."""
    Tv, Tp = transform_factors(d, tau, beta)
    return np.block([
        [np.kron(Tv, np.eye(ops.n_v)), np.zeros((2 * ops.n_v, 2 * ops.n_p))],
        [np.zeros((2 * ops.n_p, 2 * ops.n_v)), np.kron(Tp, np.eye(ops.n_p))],
    ])


def _blockdiag_WS(W, S):
    return sla.block_diag(W, W, S, S)


def assemble_Phat(ops: DiscreteOperators, c1: float, c2: float) -> np.ndarray:
    W = _dense((1 + c1) * ops.M + c2 * ops.L)
    B = _dense(ops.B)
    return _blockdiag_WS(W, B @ np.linalg.solve(W, B.T))


def schur_hat_dense(ops: DiscreteOperators, c1: float, c2: float) -> np.ndarray:
    """Dense commutator approximation ``((1 + c1) K_p^{-1} + nu c2 M_p^{-1})^{-1}``."""
    Kp, Mp = _dense(ops.Kp), _dense(ops.Mp)
    Sinv = (1 + c1) * np.linalg.inv(Kp) + ops.nu * c2 * np.linalg.inv(Mp)
    return np.linalg.inv(Sinv)


def assemble_Ptilde(ops: DiscreteOperators, c1: float, c2: float) -> np.ndarray:
    """``diag(W, W, S, S)`` with the commutator Schur approximation, exact inverses."""
    W = _dense((1 + c1) * ops.M + c2 * ops.L)
    return _blockdiag_WS(W, schur_hat_dense(ops, c1, c2))


# ---------------------------------------------------------------------------
# all-at-once preconditioners

BlockMap = Callable[[Callable, list], list]


@dataclass
class PrecondStats:
    """Per-application statistics; mutated only by the calling thread."""

    applications: int = 0
    inner_iterations: list = field(default_factory=list)   # one list per application
    inner_failures: int = 0
    fft_time: float = 0.0
    block_time: float = 0.0
    max_imag_ratio: float = 0.0

    def record(self, infos, timings, rnorm):
        self.applications += 1
        its = [0 if info is None else int(info.get("iterations", 0)) for info in infos]
        self.inner_iterations.append(its)
        self.inner_failures += sum(1 for info in infos if info and not info.get("converged", True))
        self.fft_time += timings["fft"]
        self.block_time += timings["block_solves"]
        if rnorm > 0:
            self.max_imag_ratio = max(self.max_imag_ratio, timings["imag_norm"] / rnorm)

    def per_block_average(self) -> list:
        if not self.inner_iterations:
            return []
        return list(np.mean(np.array(self.inner_iterations, dtype=float), axis=0))

    def average_inner(self) -> float:
        if not self.inner_iterations:
            return 0.0
        return float(np.mean(np.array(self.inner_iterations, dtype=float)))


class StokesPreconditioner:
    """Block-circulant preconditioner for the Stokes all-at-once system.

    ``mode = "linear"`` applies the fixed practical block preconditioner to
    every transformed block; ``mode = "nonlinear"`` solves each transformed
    block approximately with inner GMRES to relative tolerance
    ``settings.inner_tol``.  The block loop runs through ``block_map``
    (default: serial), which the caller may replace with a parallel map.
    """

    def __init__(self, hierarchy: OperatorHierarchy, grid: TimeGrid, beta: float,
                 settings: InnerSettings = InnerSettings(), mode: str = "nonlinear",
                 block_map: Optional[BlockMap] = None, variant: str = "practical"):
        if mode not in ("linear", "nonlinear"):
            raise ConfigurationError(f"unknown Stokes preconditioner mode {mode!r}")
        if variant not in ("practical", "phat", "exact"):
            raise ConfigurationError(f"unknown block variant {variant!r}")
        self.hierarchy = hierarchy
        self.ops = hierarchy.finest
        self.grid = grid
        self.beta = beta
        self.settings = settings
        self.mode = mode
        self.block_map = block_map
        self.variant = variant
        self.layout = BlockLayout(grid.n_blocks, self.ops.n_v, self.ops.n_p)
        self.spectrum: CirculantSpectrum = circulant_spectrum(grid)
        shared: dict = {}
        self.contexts = [
            StokesBlockContext.build(j, dj, grid.tau, beta, self.ops,
                                     hierarchy if variant == "practical" else None,
                                     settings, shared)
            for j, dj in enumerate(self.spectrum.d)
        ]
        if variant != "practical":
            for ctx in self.contexts:
                _factor_dense(ctx, variant)
        self.stats = PrecondStats()
        self._inner_cfg = KrylovConfig(tol=settings.inner_tol, restart=settings.inner_cap,
                                       max_iters=settings.inner_cap, record_history=False)

    def _block_pinv(self, ctx):
        if self.variant == "practical":
            return lambda y: apply_Ptilde_inv(ctx, y)
        if self.variant == "phat":
            return lambda y: apply_Phat_inv(ctx, y)
        return lambda y: _apply_Zj_inv_dense(ctx, y)

    def _solve_linear(self, j, rj):
        ctx = self.contexts[j]
        x = self._block_pinv(ctx)(apply_Tl_inv(ctx, rj))
        return apply_Tr_inv(ctx, x), {"iterations": 0, "converged": True}

    def _solve_nonlinear(self, j, rj):
        ctx = self.contexts[j]
        s = apply_Tl_inv(ctx, rj)
        pinv = self._block_pinv(ctx)
        res = gmres(lambda y: apply_Zj(ctx, y), pinv, s, self._inner_cfg)
        return apply_Tr_inv(ctx, res.x), {"iterations": res.iterations, "converged": res.converged}

    def apply(self, r: np.ndarray) -> np.ndarray:
        solver = self._solve_linear if self.mode == "linear" else self._solve_nonlinear
        y, infos, timings = circulant_block_solve(
            r, self.layout, solver, self.block_map, self.settings.use_conjugate_symmetry)
        self.stats.record(infos, timings, float(np.linalg.norm(r)))
        return y

    __call__ = apply


def apply_linear_precond(precond: StokesPreconditioner, r: np.ndarray) -> np.ndarray:
    if precond.mode != "linear":
        raise ConfigurationError("preconditioner was built in nonlinear mode")
    return precond.apply(r)


def apply_nonlinear_precond(precond: StokesPreconditioner, r: np.ndarray,
                            eps: Optional[float] = None) -> np.ndarray:
    if precond.mode != "nonlinear":
        raise ConfigurationError("preconditioner was built in linear mode")
    if eps is not None and eps != precond.settings.inner_tol:
        if not 0 < eps < 1:
            raise ConfigurationError(f"inner tolerance must lie in (0, 1), got {eps}")
        precond._inner_cfg = KrylovConfig(tol=eps, restart=precond.settings.inner_cap,
                                          max_iters=precond.settings.inner_cap,
                                          record_history=False)
    return precond.apply(r)
