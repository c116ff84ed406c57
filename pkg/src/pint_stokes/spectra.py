"""Dense spectral verification of the Stokes preconditioner family.

Everything here assembles N x N dense matrices and is meant for very small
problems (level 1, a handful of time steps).  Interval bounds are measured
from the per-block spectra rather than assumed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, NumericalError
from .linalg import DENSE_EIG_LIMIT, BlockLayout, dense_eigs
from .mesh_fem import DiscreteOperators, assemble_hierarchy
from .precond_stokes import (assemble_Phat, assemble_Ptilde, assemble_T, assemble_Zj,
                             block_constants, schur_hat_dense)
from .system import AllAtOnceOperator
from .time_diag import TimeGrid, circulant_spectrum

__all__ = [
    "UNIT_TOL",
    "INTERVAL_SLACK",
    "time_fourier_matrix",
    "circulant_preconditioner_dense",
    "block_bounds",
    "SpectralCountSummary",
    "verify_spectral_counts",
    "preconditioned_spectra",
    "write_spectra_csv",
]

UNIT_TOL = 1e-6
INTERVAL_SLACK = 1e-8


def time_fourier_matrix(layout: BlockLayout) -> np.ndarray:
    """Dense unitary time-DFT acting on field-major vectors."""
    n = layout.n_blocks
    Ft = sla.dft(n) / np.sqrt(n)
    return sla.block_diag(np.kron(Ft, np.eye(layout.n_v)), np.kron(Ft, np.eye(layout.n_p)),
                          np.kron(Ft, np.eye(layout.n_v)), np.kron(Ft, np.eye(layout.n_p)))


def circulant_preconditioner_dense(layout: BlockLayout, blocks) -> np.ndarray:
    """``F^H Pi^T diag(blocks) Pi F`` as a real matrix.

    ``blocks[j]`` is the dense block of time frequency ``j`` in
    ``(v, lam, p, mu)`` order.
    """
    N = layout.size
    if N > DENSE_EIG_LIMIT:
        raise ConfigurationError(f"dense assembly refused for N = {N} > {DENSE_EIG_LIMIT}")
    F = time_fourier_matrix(layout)
    perm = layout.block_permutation()
    D = sla.block_diag(*blocks)
    Pi = np.eye(N)[perm]
    P = F.conj().T @ Pi.T @ D @ Pi @ F
    imag = np.abs(P.imag).max()
    if imag > 1e-10 * max(np.abs(P.real).max(), 1.0):
        raise NumericalError(f"block-circulant matrix is not real (imag part {imag:.2e})")
    return P.real


def _G_from_Z(ops, d, tau, beta, X):
    T = assemble_T(ops, d, tau, beta)
    return T @ X @ T.conj().T


def block_bounds(ops: DiscreteOperators, d_values, tau: float, beta: float) -> dict:
    """Measured ``[a, b]`` for ``|lambda(Phat_j^{-1} Z_j)|`` and ``[c, d]`` for the
    Schur approximation over all blocks.

    ``c`` and ``d`` are clipped to include 1 because the velocity blocks of
    ``Ptilde_j^{-1} Phat_j`` are identities.
    """
    a, b = np.inf, 0.0
    c, dd = np.inf, 0.0
    B = ops.B.toarray()
    for dj in d_values:
        c1, c2 = block_constants(dj, tau, beta)
        Z = assemble_Zj(ops, c1, c2)
        Ph = assemble_Phat(ops, c1, c2)
        mu = np.abs(sla.eigvalsh(Z, Ph))
        a, b = min(a, mu.min()), max(b, mu.max())
        W = ((1 + c1) * ops.M + c2 * ops.L).toarray()
        S = B @ np.linalg.solve(W, B.T)
        lam = sla.eigvalsh(S, schur_hat_dense(ops, c1, c2))
        c, dd = min(c, lam.min()), max(dd, lam.max())
    return {"a_hat": float(a), "b_hat": float(b),
            "c": float(min(c, 1.0)), "d": float(max(dd, 1.0)),
            "schur_min": float(c), "schur_max": float(dd)}


@dataclass
class SpectralCountSummary:
    n_t: int
    level: int
    beta: float
    nu: float
    N: int
    n_v: int
    n_p: int
    unit_count: int
    unit_bound: int
    hat_count: int
    hat_bound: int
    tilde_count: int
    tilde_bound: int
    a_hat: float
    b_hat: float
    c: float
    d: float
    product_min: float
    product_max: float
    product_bound_holds: bool
    unit_fraction: float
    plateau_threshold: float

    @property
    def all_hold(self) -> bool:
        return (self.unit_count >= self.unit_bound and self.hat_count >= self.hat_bound
                and self.tilde_count >= self.tilde_bound and self.product_bound_holds)

    def to_json(self, path) -> None:
        data = asdict(self)
        data["all_hold"] = self.all_hold
        with open(path, "w") as fh:
            json.dump(data, fh, indent=2)


def _setup(n_t, level, beta, nu, T):
    if level > 2:
        raise ConfigurationError("dense verification is limited to level <= 2")
    ops = assemble_hierarchy(level, level, nu).finest
    grid = TimeGrid(n_t, T)
    A_op = AllAtOnceOperator(ops, grid, beta)
    lay = A_op.layout
    if lay.size > DENSE_EIG_LIMIT:
        raise ConfigurationError(f"N = {lay.size} exceeds the dense limit {DENSE_EIG_LIMIT}")
    return ops, grid, A_op, lay


def _preconditioners(ops, grid, beta, lay):
    tau = grid.tau
    d = circulant_spectrum(grid).d
    hat_blocks, tilde_blocks = [], []
    for dj in d:
        c1, c2 = block_constants(dj, tau, beta)
        hat_blocks.append(_G_from_Z(ops, dj, tau, beta, assemble_Phat(ops, c1, c2)))
        tilde_blocks.append(_G_from_Z(ops, dj, tau, beta, assemble_Ptilde(ops, c1, c2)))
    return (d, circulant_preconditioner_dense(lay, hat_blocks),
            circulant_preconditioner_dense(lay, tilde_blocks))


def preconditioned_spectra(n_t: int = 10, level: int = 1, beta: float = 1e-2, nu: float = 1.0,
                    T: float = 1.0) -> dict:
    """Sorted eigenvalues of the four preconditioned operators.

    Keys: ``PC_A`` (general, complex), ``Phat_A``, ``Ptilde_PC`` and
    ``Ptilde_A`` (real, from symmetric-definite pencils).
    """
    ops, grid, A_op, lay = _setup(n_t, level, beta, nu, T)
    A = A_op.to_dense()
    PC = A_op.to_dense(circulant=True)
    _, Phat, Ptilde = _preconditioners(ops, grid, beta, lay)
    return {
        "PC_A": dense_eigs(A, PC),
        "Phat_A": np.sort(sla.eigvalsh(A, Phat))[::-1],
        "Ptilde_PC": np.sort(sla.eigvalsh(PC, Ptilde))[::-1],
        "Ptilde_A": np.sort(sla.eigvalsh(A, Ptilde))[::-1],
    }


def verify_spectral_counts(n_t: int = 6, level: int = 1, beta: float = 1e-2, nu: float = 1.0,
                          T: float = 1.0) -> SpectralCountSummary:
    """Count eigenvalues against the unit, hat and tilde lower bounds."""
    if n_t > 10:
        raise ConfigurationError("eigenvalue counts are verified for n_t <= 10 only")
    ops, grid, A_op, lay = _setup(n_t, level, beta, nu, T)
    A = A_op.to_dense()
    PC = A_op.to_dense(circulant=True)
    d, Phat, Ptilde = _preconditioners(ops, grid, beta, lay)
    bounds = block_bounds(ops, d, grid.tau, beta)
    N, nv = lay.size, ops.n_v

    mu_c = dense_eigs(A, PC)
    unit = int(np.sum(np.abs(mu_c - 1.0) < UNIT_TOL))

    s = INTERVAL_SLACK
    a, b = bounds["a_hat"], bounds["b_hat"]
    mu_hat = np.abs(sla.eigvalsh(A, Phat))
    hat = int(np.sum((mu_hat >= a - s) & (mu_hat <= b + s)))

    at, bt = a * bounds["c"], b * bounds["d"]
    mu_tilde = np.abs(sla.eigvalsh(A, Ptilde))
    tilde = int(np.sum((mu_tilde >= at - s) & (mu_tilde <= bt + s)))

    lem = np.abs(sla.eigvalsh(PC, Ptilde))
    product_bound_holds = bool(lem.min() >= at - s and lem.max() <= bt + s)

    return SpectralCountSummary(
        n_t=n_t, level=level, beta=beta, nu=nu, N=N, n_v=nv, n_p=ops.n_p,
        unit_count=unit, unit_bound=N - 2 * nv,
        hat_count=hat, hat_bound=N - 4 * nv,
        tilde_count=tilde, tilde_bound=N - 4 * nv,
        a_hat=a, b_hat=b, c=bounds["c"], d=bounds["d"],
        product_min=float(lem.min()), product_max=float(lem.max()),
        product_bound_holds=product_bound_holds,
        unit_fraction=unit / N,
        plateau_threshold=1.0 - 1.0 / (n_t - 1) - 2.0 * nv / N,
    )


def write_spectra_csv(path, spectra: dict) -> None:
    """One row per index: ``index, <name>_re, <name>_im`` for every spectrum."""
    names = list(spectra)
    n = max(len(v) for v in spectra.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index"] + [f"{k}_{part}" for k in names for part in ("re", "im")])
        for i in range(n):
            row = [i]
            for k in names:
                v = spectra[k]
                if i < len(v):
                    z = complex(v[i])
                    row += [f"{z.real:.16e}", f"{z.imag:.16e}"]
                else:
                    row += ["", ""]
            w.writerow(row)
