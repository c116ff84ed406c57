"""Fixed-cost approximate inverses used inside the block preconditioners.

Every solver here runs a fixed number of iterations from a zero initial
guess, so each ``*_apply`` is a fixed linear map of its right-hand side.
That is what allows plain GMRES as the per-block solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, NumericalError
from .linalg import DenseLU, SparseMatrix

__all__ = [
    "MASS_BOUNDS",
    "mass_spectral_bounds",
    "ChebyshevPlan",
    "build_chebyshev",
    "chebyshev_apply",
    "MultigridPlan",
    "build_multigrid",
    "mg_vcycle_apply",
    "sor_sweep",
    "MAX_COARSE_DIM",
    "InnerSettings",
]

# Extreme eigenvalues of diag(M_e)^{-1} M_e for one square element.  By
# the element-by-element argument they bound diag(M)^{-1} M on any
# uniform quadrilateral mesh; both families are tensor products of the 1D
# values ([1/2, 3/2] for P1, [1/2, 5/4] for P2).
MASS_BOUNDS = {
    "Q1": (0.25, 2.25),
    "Q2": (0.25, 1.5625),
}

MAX_COARSE_DIM = 2000


def mass_spectral_bounds(element: str) -> tuple[float, float]:
    try:
        return MASS_BOUNDS[element]
    except KeyError:
        raise ConfigurationError(f"unknown element family {element!r}") from None


def _as_sparse(A) -> SparseMatrix:
    return A if isinstance(A, SparseMatrix) else SparseMatrix.from_scipy(A)


# ---------------------------------------------------------------------------
# Chebyshev

@dataclass(frozen=True)
class ChebyshevPlan:
    matrix: SparseMatrix
    iterations: int
    lo: float
    hi: float

    def __post_init__(self):
        if not (0 < self.lo <= self.hi):
            raise ConfigurationError(f"invalid spectral bounds [{self.lo}, {self.hi}]")
        if self.iterations < 1:
            raise ConfigurationError("Chebyshev needs at least one iteration")


def build_chebyshev(A, element: str = "Q1", iterations: int = 10) -> ChebyshevPlan:
    lo, hi = mass_spectral_bounds(element)
    return ChebyshevPlan(_as_sparse(A), iterations, lo, hi)


def chebyshev_apply(plan: ChebyshevPlan, r: np.ndarray) -> np.ndarray:
    """Jacobi-preconditioned Chebyshev semi-iteration for ``A x = r``."""
    A = plan.matrix
    dinv = 1.0 / A.diagonal()
    theta = 0.5 * (plan.hi + plan.lo)
    delta = 0.5 * (plan.hi - plan.lo)
    x = np.zeros(r.shape[0], dtype=np.result_type(A.dtype, r.dtype))
    res = np.array(r, dtype=x.dtype)
    if delta <= 1e-14 * theta:
        # zero-width interval: damped Jacobi with step 1/theta
        for _ in range(plan.iterations):
            x += dinv * res / theta
            res = A.residual(x, r)
        return x
    sigma = theta / delta
    rho = 1.0 / sigma
    d = dinv * res / theta
    for k in range(plan.iterations):
        x += d
        if k == plan.iterations - 1:
            break
        res -= A @ d
        rho_new = 1.0 / (2.0 * sigma - rho)
        d = (rho_new * rho) * d + (2.0 * rho_new / delta) * (dinv * res)
        rho = rho_new
    return x


# ---------------------------------------------------------------------------
# SOR and multigrid

def sor_sweep(A: SparseMatrix, b: np.ndarray, x: np.ndarray, omega: float = 1.0,
              sweeps: int = 1) -> None:
    """Forward SOR sweeps updating ``x`` in place; ``omega = 1`` is Gauss-Seidel."""
    A.sor_sweep(b, x, omega, sweeps)


@dataclass
class MultigridPlan:
    """V-cycle multigrid over geometrically re-assembled level matrices.

    ``matrices[0]`` is the coarsest level, solved with a dense LU
    factorization.  ``prolongations[i]`` maps level ``i`` to ``i + 1`` and
    restriction is its transpose.
    """

    matrices: list
    prolongations: list
    restrictions: list
    coarse_lu: DenseLU
    cycles: int = 4
    omega: float = 1.0
    pre_sweeps: int = 2
    post_sweeps: int = 2

    @property
    def n_levels(self) -> int:
        return len(self.matrices)

    @property
    def dtype(self):
        return self.matrices[-1].dtype


def build_multigrid(matrices: Sequence, prolongations: Sequence, cycles: int = 4,
                    omega: float = 1.0, pre_sweeps: int = 2, post_sweeps: int = 2) -> MultigridPlan:
    if len(prolongations) != len(matrices) - 1:
        raise ConfigurationError("need one prolongation per level transition")
    if cycles < 1:
        raise ConfigurationError("multigrid needs at least one cycle")
    if not 0 < omega < 2:
        raise ConfigurationError(f"SOR relaxation must lie in (0, 2), got {omega}")
    mats = [_as_sparse(A) for A in matrices]
    coarse = mats[0]
    if coarse.shape[0] > MAX_COARSE_DIM:
        raise ConfigurationError(f"coarsest level has {coarse.shape[0]} > {MAX_COARSE_DIM} unknowns")
    lu = DenseLU(coarse.toarray())
    small = lu.pivot_magnitudes()
    if small.min() <= 1e-13 * max(small.max(), 1e-300):
        raise NumericalError(
            f"coarse-level matrix (n={coarse.shape[0]}) is numerically singular; "
            f"min |U_ii| = {small.min():.3e}")
    P = [_as_sparse(p) for p in prolongations]
    R = [_as_sparse(sp.csr_matrix(p).T) for p in prolongations]
    return MultigridPlan(mats, P, R, lu, cycles, omega, pre_sweeps, post_sweeps)


def _vcycle(plan: MultigridPlan, level: int, b: np.ndarray, x: np.ndarray) -> None:
    if level == 0:
        x[:] = plan.coarse_lu.solve(b)
        return
    A = plan.matrices[level]
    A.sor_sweep(b, x, plan.omega, plan.pre_sweeps)
    r = A.residual(x, b)
    rc = plan.restrictions[level - 1] @ r
    ec = np.zeros(rc.shape[0], dtype=x.dtype)
    _vcycle(plan, level - 1, rc, ec)
    x += plan.prolongations[level - 1] @ ec
    A.sor_sweep(b, x, plan.omega, plan.post_sweeps)


def mg_vcycle_apply(plan: MultigridPlan, r: np.ndarray) -> np.ndarray:
    """``cycles`` V-cycles for ``A x = r`` starting from ``x = 0``."""
    x = np.zeros(r.shape[0], dtype=np.result_type(plan.dtype, r.dtype))
    b = np.ascontiguousarray(r, dtype=x.dtype)
    top = plan.n_levels - 1
    if top == 0:
        _vcycle(plan, 0, b, x)
        return x
    for _ in range(plan.cycles):
        _vcycle(plan, top, b, x)
    return x


@dataclass(frozen=True)
class InnerSettings:
    """Knobs shared by every block preconditioner."""

    mg_cycles: int = 4
    sor_omega: float = 1.0
    pre_sweeps: int = 2
    post_sweeps: int = 2
    chebyshev_iters: int = 10
    inner_tol: float = 1e-2
    inner_cap: int = 200
    uzawa_iters: int = 6
    uzawa_mu: float = 0.75
    use_conjugate_symmetry: bool = True

    def __post_init__(self):
        if self.mg_cycles < 1 or self.chebyshev_iters < 1:
            raise ConfigurationError("MG cycles and Chebyshev iterations must be >= 1")
        if not 0 < self.sor_omega < 2:
            raise ConfigurationError(f"SOR relaxation must lie in (0, 2), got {self.sor_omega}")
        if self.pre_sweeps < 0 or self.post_sweeps < 0:
            raise ConfigurationError("sweep counts must be non-negative")
        if not 0 < self.inner_tol < 1:
            raise ConfigurationError(f"inner tolerance must lie in (0, 1), got {self.inner_tol}")
        if self.inner_cap < 1:
            raise ConfigurationError("inner iteration cap must be >= 1")
        if self.uzawa_iters < 1:
            raise ConfigurationError("Uzawa needs at least one iteration")
        if not 0 < self.uzawa_mu < 2:
            raise ConfigurationError(f"Uzawa parameter must lie in (0, 2), got {self.uzawa_mu}")

    def multigrid(self, matrices, prolongations) -> MultigridPlan:
        return build_multigrid(matrices, prolongations, cycles=self.mg_cycles,
                               omega=self.sor_omega, pre_sweeps=self.pre_sweeps,
                               post_sweeps=self.post_sweeps)
