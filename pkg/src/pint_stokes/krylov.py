"""Restarted right-preconditioned GMRES and flexible GMRES.

Both solvers are matrix-free and work in real or complex arithmetic.  The
Arnoldi process uses modified Gram-Schmidt and complex Givens rotations.
Convergence is declared on the relative residual ``|b - A x| / |b|``: the
recurrence residual is used inside a restart cycle and the true residual is
recomputed at every cycle boundary before convergence is reported.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError

__all__ = ["KrylovConfig", "SolveResult", "gmres", "fgmres", "write_history_csv"]

Operator = Callable[[np.ndarray], np.ndarray]

BREAKDOWN_RTOL = 1e-14
REORTH_RATIO = 0.7071


@dataclass(frozen=True)
class KrylovConfig:
    tol: float = 1e-6
    restart: int = 30
    max_iters: int = 1000
    record_history: bool = True
    record_iterates: bool = False
    check_orthogonality: bool = False

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ConfigurationError(f"tol must lie in (0, 1), got {self.tol}")
        if self.restart < 1:
            raise ConfigurationError(f"restart must be >= 1, got {self.restart}")
        if self.max_iters < 0:
            raise ConfigurationError(f"max_iters must be >= 0, got {self.max_iters}")


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual_history: list = field(default_factory=list)
    final_residual: float = 0.0
    breakdown: bool = False
    iterates: list = field(default_factory=list)
    orthogonality_loss: float = 0.0
    timings: dict = field(default_factory=dict)


class _NeedsComplex(Exception):
    """Raised when a real run meets a complex operator or preconditioner."""


def _check_dtype(v, dtype):
    v = np.asarray(v)
    if np.iscomplexobj(v) and not np.issubdtype(dtype, np.complexfloating):
        raise _NeedsComplex
    return v


def _givens(a, b):
    """Rotation ``(c, s)`` with ``c a + s b = r`` and ``-conj(s) a + c b = 0``."""
    abs_a = abs(a)
    if abs_a == 0.0:
        return 0.0, 1.0
    rho = np.hypot(abs_a, abs(b))
    return abs_a / rho, (a / abs_a) * np.conj(b) / rho


def _run(apply_A: Operator, apply_Pinv: Optional[Operator], b: np.ndarray,
         cfg: KrylovConfig, flexible: bool, x0: Optional[np.ndarray] = None) -> SolveResult:
    if apply_Pinv is None:
        apply_Pinv = lambda v: v  # noqa: E731
    b = np.asarray(b)
    dtype = np.result_type(b.dtype, np.float64)
    n = b.shape[0]
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n, dtype=dtype) if x0 is None else np.array(x0, dtype=dtype)
    res = SolveResult(x=x, iterations=0, converged=False)
    res.timings = {"orthogonalization": 0.0}
    if bnorm == 0.0:
        res.x = np.zeros(n, dtype=dtype)
        res.converged = True
        res.residual_history = [0.0] if cfg.record_history else []
        return res

    r = b - _check_dtype(apply_A(x), dtype) if x0 is not None else b.astype(dtype, copy=True)
    rnorm = float(np.linalg.norm(r))
    if cfg.record_history:
        res.residual_history.append(rnorm / bnorm)
    m = cfg.restart
    total = 0
    while True:
        if rnorm <= cfg.tol * bnorm:
            res.converged = True
            break
        if total >= cfg.max_iters:
            break
        V = np.zeros((m + 1, n), dtype=dtype)
        Z = np.zeros((m, n), dtype=dtype) if flexible else None
        H = np.zeros((m + 1, m), dtype=dtype)
        cs = np.zeros(m)
        sn = np.zeros(m, dtype=dtype)
        g = np.zeros(m + 1, dtype=dtype)
        g[0] = rnorm
        V[0] = r / rnorm
        k_used = 0
        breakdown = False
        for k in range(m):
            if total >= cfg.max_iters:
                break
            z = _check_dtype(apply_Pinv(V[k]), dtype)
            if flexible:
                Z[k] = z
            w = np.array(_check_dtype(apply_A(z), dtype), dtype=dtype)
            t0 = time.perf_counter()
            wnorm0 = float(np.linalg.norm(w))
            for i in range(k + 1):
                H[i, k] = np.vdot(V[i], w)
                w -= H[i, k] * V[i]
            hk = float(np.linalg.norm(w))
            if hk < REORTH_RATIO * wnorm0:
                # one extra MGS pass (Daniel-Gragg-Kaufman-Stewart criterion)
                for i in range(k + 1):
                    c = np.vdot(V[i], w)
                    H[i, k] += c
                    w -= c * V[i]
                hk = float(np.linalg.norm(w))
            H[k + 1, k] = hk
            breakdown = hk <= BREAKDOWN_RTOL * max(wnorm0, np.finfo(float).tiny)
            if not breakdown:
                V[k + 1] = w / hk
            res.timings["orthogonalization"] += time.perf_counter() - t0
            for i in range(k):
                hi, hi1 = H[i, k], H[i + 1, k]
                H[i, k] = cs[i] * hi + sn[i] * hi1
                H[i + 1, k] = -np.conj(sn[i]) * hi + cs[i] * hi1
            cs[k], sn[k] = _givens(H[k, k], H[k + 1, k])
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            g[k + 1] = -np.conj(sn[k]) * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k_used = k + 1
            rec = abs(g[k + 1])
            if cfg.record_history:
                res.residual_history.append(rec / bnorm)
            if cfg.record_iterates:
                res.iterates.append(x + _update(H, g, k_used, V, Z, apply_Pinv, flexible))
            if rec <= cfg.tol * bnorm or breakdown:
                break
        if cfg.check_orthogonality:
            kk = k_used + (0 if breakdown else 1)
            G = V[:kk].conj() @ V[:kk].T
            res.orthogonality_loss = max(res.orthogonality_loss,
                                         float(np.abs(G - np.eye(kk)).max()))
        if k_used:
            x = x + _update(H, g, k_used, V, Z, apply_Pinv, flexible)
        r = b - _check_dtype(apply_A(x), dtype)
        rnorm = float(np.linalg.norm(r))
        if breakdown:
            res.breakdown = True
            res.converged = rnorm <= cfg.tol * bnorm
            break
        if k_used == 0:
            break
    res.x = x
    res.iterations = total
    res.final_residual = rnorm / bnorm
    return res


def _update(H, g, k, V, Z, apply_Pinv, flexible):
    y = _back_substitute(H[:k, :k], g[:k])
    if flexible:
        return y @ Z[:k]
    return _check_dtype(apply_Pinv(y @ V[:k]), V.dtype)


def _solve(apply_A, apply_Pinv, b, cfg, flexible, x0):
    try:
        return _run(apply_A, apply_Pinv, b, cfg, flexible, x0)
    except _NeedsComplex:
        # a real right-hand side met a complex map: redo the solve in complex arithmetic
        b = np.asarray(b, dtype=np.complex128)
        x0 = None if x0 is None else np.asarray(x0, dtype=np.complex128)
        return _run(apply_A, apply_Pinv, b, cfg, flexible, x0)


def _back_substitute(R, g):
    k = R.shape[0]
    y = np.zeros(k, dtype=np.result_type(R.dtype, g.dtype))
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


def gmres(apply_A: Operator, apply_Pinv: Optional[Operator], b: np.ndarray,
          cfg: KrylovConfig = KrylovConfig(), x0=None) -> SolveResult:
    """Right-preconditioned restarted GMRES; ``apply_Pinv`` must be a fixed linear map."""
    return _solve(apply_A, apply_Pinv, b, cfg, False, x0)


def fgmres(apply_A: Operator, apply_Pinv: Optional[Operator], b: np.ndarray,
           cfg: KrylovConfig = KrylovConfig(restart=10), x0=None) -> SolveResult:
    """Flexible GMRES; the preconditioner may change between iterations.

    The preconditioned directions are stored, so memory grows as
    ``O(n * restart)``.
    """
    return _solve(apply_A, apply_Pinv, b, cfg, True, x0)


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "residual"])
        for i, r in enumerate(history):
            w.writerow([i, f"{r:.16e}"])
