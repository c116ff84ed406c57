"""Experiment drivers behind the command-line interface.

Each ``cmd_*`` function takes a validated :class:`RunConfig`, runs the
experiment, optionally writes its files to ``cfg.output_dir`` and returns a
report object.  Nothing here parses arguments; see :mod:`pint_stokes.cli`.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .errors import ConfigurationError
from .krylov import fgmres, gmres, write_history_csv
from .linalg import DENSE_EIG_LIMIT, dump_block_vector
from .mesh_fem import assemble_hierarchy, export_matrix_market
from .parallel import BlockPool, available_workers
from .precond_oseen import OseenPreconditioner
from .precond_stokes import StokesPreconditioner
from .report import SolverReport, append_table_row
from .spectra import preconditioned_spectra, verify_spectral_counts, write_spectra_csv
from .system import (AllAtOnceOperator, build_rhs, oseen_cavity, stokes_manufactured,
                     velocity_error)
from .time_diag import TimeGrid

__all__ = ["build_problem", "cmd_solve", "cmd_eigs", "cmd_scaling", "cmd_convergence",
           "ScalingReport", "ConvergenceReport", "fit_loglog_slope", "weak_scaling_n_t"]

log = logging.getLogger(__name__)


def build_problem(cfg: RunConfig, grid: TimeGrid):
    if cfg.problem == "oseen_cavity":
        return oseen_cavity(cfg.beta, grid, cfg.nu)
    return stokes_manufactured(cfg.beta, grid, cfg.nu)


def _output_dir(cfg: RunConfig) -> Optional[Path]:
    if cfg.output_dir is None:
        return None
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_solve_outputs(cfg, out, report, ops, A_op):
    stem = cfg.run_name
    report.to_json(out / f"{stem}_report.json")
    append_table_row(out / "results.csv", report)
    write_history_csv(out / f"{stem}_history.csv", report.residual_history)
    if cfg.dump_solution and report.solution is not None:
        dump_block_vector(out / f"{stem}_solution.bin", report.solution)
    if cfg.export_matrices:
        for name in ("M", "K", "L", "B", "Mp", "Kp"):
            export_matrix_market(out / f"{stem}_{name}.mtx", getattr(ops, name),
                                 comment=f"{name} at level {cfg.level}")
        if A_op.shape[0] <= 200_000:
            export_matrix_market(out / f"{stem}_A.mtx", A_op.to_sparse(),
                                 comment=f"all-at-once matrix, n_t = {cfg.n_t}")


def cmd_solve(cfg: RunConfig, block_map=None) -> SolverReport:
    """Assemble, precondition and solve one all-at-once system.

    ``block_map`` replaces the worker pool built from ``cfg.workers``.  The
    report is written before returning, also when the outer solver fails to
    converge; the caller decides the exit status from ``report.converged``.
    """
    cfg.validate()
    t_start = time.perf_counter()
    grid = TimeGrid(cfg.n_t, cfg.T)
    problem = build_problem(cfg, grid)
    hierarchy = assemble_hierarchy(cfg.coarsest_level, cfg.level, cfg.nu, problem.wind)
    ops = hierarchy.finest
    A_op = AllAtOnceOperator(ops, grid, cfg.beta)
    b = build_rhs(problem, ops)
    t_assembly = time.perf_counter() - t_start

    pool = None
    if block_map is None:
        pool = BlockPool(cfg.workers, cfg.weak_partition)
        block_map = pool
    try:
        t0 = time.perf_counter()
        settings = cfg.inner_settings()
        if cfg.preconditioner == "oseen_uz":
            precond = OseenPreconditioner(hierarchy, grid, cfg.beta, settings, block_map)
        else:
            precond = StokesPreconditioner(hierarchy, grid, cfg.beta, settings,
                                           mode=cfg.preconditioner, block_map=block_map)
        t_setup = time.perf_counter() - t0
        t0 = time.perf_counter()
        solver = fgmres if cfg.flexible else gmres
        result = solver(A_op, precond, b, cfg.krylov_config())
        t_solve = time.perf_counter() - t0
    finally:
        if pool is not None:
            pool.close()

    stats = precond.stats
    err = None
    if problem.exact_v is not None:
        err = velocity_error(problem, ops, result.x)
    timings = {
        "assembly": t_assembly, "setup": t_setup, "fft": stats.fft_time,
        "block_solves": stats.block_time,
        "orthogonalization": result.timings.get("orthogonalization", 0.0),
        "solve": t_solve, "total": time.perf_counter() - t_start,
    }
    lay = A_op.layout
    report = SolverReport(
        problem=cfg.problem, preconditioner=cfg.preconditioner, level=cfg.level,
        n_t=cfg.n_t, T=cfg.T, beta=cfg.beta, nu=cfg.nu, n_v=ops.n_v, n_p=ops.n_p,
        dofs=lay.size, workers=cfg.workers if pool is not None else 1,
        outer_iterations=result.iterations, converged=bool(result.converged),
        final_residual=float(result.final_residual), tol=cfg.tol,
        inner_average=stats.average_inner(), inner_per_block=stats.per_block_average(),
        inner_failures=stats.inner_failures, residual_history=list(result.residual_history),
        timings=timings, velocity_error=err, solution=result.x,
    )
    out = _output_dir(cfg)
    if out is not None:
        _write_solve_outputs(cfg, out, report, ops, A_op)
    log.info("%s/%s level %d n_t %d beta %g: outer %d, inner %.1f, %.2f s, converged %s",
             cfg.problem, cfg.preconditioner, cfg.level, cfg.n_t, cfg.beta,
             report.outer_iterations, report.inner_average, timings["total"], report.converged)
    return report


# ---------------------------------------------------------------------------
# spectra

def cmd_eigs(cfg: RunConfig):
    """Preconditioned spectra and eigenvalue counts for a small problem.

    Returns ``(summary, spectra)``.  Writes ``<run>_spectra.csv`` and
    ``<run>_counts.json`` when an output directory is configured.
    """
    cfg.validate()
    N = 2 * (cfg.n_t - 1) * _sizes(cfg.level)
    if N > DENSE_EIG_LIMIT:
        raise ConfigurationError(f"dense eigenvalue run refused: N = {N} exceeds "
                                 f"{DENSE_EIG_LIMIT}; reduce level or n_t")
    summary = verify_spectral_counts(cfg.n_t, cfg.level, cfg.beta, cfg.nu, cfg.T)
    spectra = preconditioned_spectra(cfg.n_t, cfg.level, cfg.beta, cfg.nu, cfg.T)
    out = _output_dir(cfg)
    if out is not None:
        write_spectra_csv(out / f"{cfg.run_name}_spectra.csv", spectra)
        summary.to_json(out / f"{cfg.run_name}_counts.json")
    return summary, spectra


def _sizes(level: int) -> int:
    """``n_v + n_p`` of the Q2-Q1 space at ``level``."""
    m = 2 ** level
    return 2 * (2 * m - 1) ** 2 + (m + 1) ** 2 - 1


# ---------------------------------------------------------------------------
# scaling

def fit_loglog_slope(workers: Sequence[int], times: Sequence[float]) -> Optional[float]:
    """Least-squares slope of ``log(time)`` against ``log(workers)``."""
    if len(set(workers)) < 2:
        return None
    slope, _ = np.polyfit(np.log(np.asarray(workers, float)),
                          np.log(np.asarray(times, float)), 1)
    return float(slope)


def weak_scaling_n_t(a: int, workers: int) -> int:
    """``n_t = a * workers - 1`` so each worker owns about ``a`` blocks."""
    if a < 2:
        raise ConfigurationError(f"weak-scaling block count a must be >= 2, got {a}")
    return a * workers - 1


@dataclass
class ScalingReport:
    mode: str
    workers: list
    n_t: list
    times: list
    outer_iterations: list
    slope: Optional[float]
    ratio: float
    available_workers: int
    reports: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("reports")
        return data

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @property
    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.times, self.times[1:]))


def cmd_scaling(cfg: RunConfig, worker_list: Sequence[int], mode: str = "strong",
                a: int = 8, allow_oversubscribe: bool = False) -> ScalingReport:
    """Repeat :func:`cmd_solve` for several worker counts.

    The measured time is the outer-solve phase (serial assembly excluded).
    Strong mode keeps ``cfg.n_t``; weak mode uses ``n_t = a * N_P - 1``,
    turns the conjugate-pair shortcut off so every block is solved, and
    gives the first worker one block fewer than the others.
    """
    if mode not in ("strong", "weak"):
        raise ConfigurationError(f"scaling mode must be 'strong' or 'weak', got {mode!r}")
    workers = sorted(set(int(w) for w in worker_list))
    if not workers or workers[0] < 1:
        raise ConfigurationError("worker list must contain positive integers")
    avail = available_workers()
    if workers[-1] > avail and not allow_oversubscribe:
        raise ConfigurationError(f"{workers[-1]} workers requested but only {avail} "
                                 "cores are available")
    reports = []
    for w in workers:
        run = cfg.replace(workers=w, output_dir=None)
        if mode == "weak":
            run = run.replace(n_t=weak_scaling_n_t(a, w), weak_partition=True,
                              conjugate_symmetry=False)
        reports.append(cmd_solve(run))
    times = [r.timings["solve"] for r in reports]
    srep = ScalingReport(
        mode=mode, workers=workers, n_t=[r.n_t for r in reports], times=times,
        outer_iterations=[r.outer_iterations for r in reports],
        slope=fit_loglog_slope(workers, times) if mode == "strong" else None,
        ratio=float(max(times) / min(times)), available_workers=avail, reports=reports)
    out = _output_dir(cfg)
    if out is not None:
        srep.to_json(out / f"{cfg.run_name}_scaling_{mode}.json")
        for r in reports:
            append_table_row(out / f"{cfg.run_name}_scaling_{mode}.csv", r)
    return srep


# ---------------------------------------------------------------------------
# manufactured-solution convergence

@dataclass
class ConvergenceReport:
    levels: list
    n_t: list
    dofs: list
    errors: list
    outer_iterations: list

    @property
    def monotone(self) -> bool:
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))

    def rates(self) -> list:
        e = np.asarray(self.errors)
        return [float(v) for v in np.log2(e[:-1] / e[1:])]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("level,n_t,dofs,velocity_error,outer\n")
            for row in zip(self.levels, self.n_t, self.dofs, self.errors,
                           self.outer_iterations):
                fh.write("{},{},{},{:.16e},{}\n".format(*row))


def cmd_convergence(cfg: RunConfig, levels: Sequence[int] = (1, 2, 3),
                    n_t0: int = 4) -> ConvergenceReport:
    """Velocity error under simultaneous space and time refinement.

    The manufactured solution is exact only for unit viscosity, so the
    problem and ``nu`` are forced accordingly; ``n_t`` doubles per level.
    """
    base = cfg.replace(problem="stokes_manufactured", nu=1.0, output_dir=None,
                       preconditioner="nonlinear" if cfg.preconditioner == "oseen_uz"
                       else cfg.preconditioner)
    rows = []
    for i, lev in enumerate(levels):
        run = base.replace(level=lev, coarsest_level=min(cfg.coarsest_level, lev),
                           n_t=n_t0 * 2 ** i)
        rows.append(cmd_solve(run))
    rep = ConvergenceReport(levels=list(levels), n_t=[r.n_t for r in rows],
                            dofs=[r.dofs for r in rows],
                            errors=[r.velocity_error for r in rows],
                            outer_iterations=[r.outer_iterations for r in rows])
    out = _output_dir(cfg)
    if out is not None:
        rep.to_csv(out / f"{cfg.run_name}_convergence.csv")
    return rep
