"""Parallel-in-time all-at-once solvers for Stokes and Oseen optimal control."""

from .config import RunConfig, load_config
from .driver import cmd_convergence, cmd_eigs, cmd_scaling, cmd_solve
from .errors import (AssemblyError, BlockSolveError, ConfigurationError, NumericalError,
                     PintError)
from .inner_solvers import InnerSettings
from .krylov import KrylovConfig, SolveResult, fgmres, gmres
from .linalg import BlockLayout, SparseMatrix
from .mesh_fem import assemble_hierarchy, assemble_operators, build_hierarchy
from .parallel import BlockPool, block_parallel_map
from .precond_oseen import OseenPreconditioner
from .precond_stokes import StokesPreconditioner
from .report import SolverReport
from .system import AllAtOnceOperator, build_rhs, oseen_cavity, stokes_manufactured
from .time_diag import TimeGrid

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "load_config", "cmd_solve", "cmd_eigs", "cmd_scaling", "cmd_convergence",
    "PintError", "ConfigurationError", "AssemblyError", "NumericalError", "BlockSolveError",
    "InnerSettings", "KrylovConfig", "SolveResult", "gmres", "fgmres", "BlockLayout",
    "SparseMatrix", "assemble_hierarchy", "assemble_operators", "build_hierarchy",
    "BlockPool", "block_parallel_map", "OseenPreconditioner", "StokesPreconditioner",
    "SolverReport", "AllAtOnceOperator", "build_rhs", "oseen_cavity",
    "stokes_manufactured", "TimeGrid",
]
