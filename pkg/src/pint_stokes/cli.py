"""Command-line interface: ``python -m pint_stokes <command> [options]``.

Exit codes: 0 success, 1 outer solver did not converge (report still
written), 2 configuration error, 3 a verification check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import PRECONDITIONERS, PROBLEMS, load_config
from .driver import cmd_convergence, cmd_eigs, cmd_scaling, cmd_solve
from .errors import ConfigurationError, PintError
from .parallel import WORKERS_ENV

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_CONFIG, EXIT_CHECK_FAILED = 0, 1, 2, 3


def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("problem")
    g.add_argument("--config", help="key = value file with RunConfig fields")
    g.add_argument("--problem", choices=PROBLEMS)
    g.add_argument("--preconditioner", choices=PRECONDITIONERS)
    g.add_argument("--level", type=int)
    g.add_argument("--coarsest-level", type=int)
    g.add_argument("--n-t", type=int, dest="n_t")
    g.add_argument("--T", type=float, dest="T")
    g.add_argument("--beta", type=float)
    g.add_argument("--nu", type=float)
    s = p.add_argument_group("solver")
    s.add_argument("--tol", type=float)
    s.add_argument("--restart", type=int)
    s.add_argument("--max-iters", type=int)
    s.add_argument("--inner-tol", type=float)
    s.add_argument("--inner-cap", type=int)
    s.add_argument("--uzawa-iters", type=int)
    s.add_argument("--mg-cycles", type=int)
    s.add_argument("--sor-omega", type=float)
    s.add_argument("--chebyshev-iters", type=int)
    s.add_argument("--no-conjugate-symmetry", dest="conjugate_symmetry",
                   action="store_const", const=False)
    o = p.add_argument_group("execution and output")
    o.add_argument("--workers", type=int, help=f"worker threads (env {WORKERS_ENV})")
    o.add_argument("--seed", type=int)
    o.add_argument("--output-dir")
    o.add_argument("--run-name")
    o.add_argument("--dump-solution", action="store_const", const=True)
    o.add_argument("--export-matrices", action="store_const", const=True)
    o.add_argument("-v", "--verbose", action="store_true")


_NON_CONFIG = {"command", "config", "verbose", "worker_list", "mode", "a",
               "oversubscribe", "levels", "n_t0"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pint_stokes",
        description="All-at-once parallel-in-time solvers for Stokes and Oseen control.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="solve one all-at-once system")
    _add_common(p)
    p = sub.add_parser("eigs", help="dense spectra and eigenvalue counts (small sizes)")
    _add_common(p)
    p = sub.add_parser("scaling", help="strong or weak scaling over worker counts")
    _add_common(p)
    p.add_argument("--worker-list", type=int, nargs="+", default=[1, 2, 4])
    p.add_argument("--mode", choices=("strong", "weak"), default="strong")
    p.add_argument("--a", type=int, default=8, help="blocks per worker in weak mode")
    p.add_argument("--oversubscribe", action="store_true",
                   help="allow more workers than available cores")
    p = sub.add_parser("convergence", help="manufactured-solution refinement study")
    _add_common(p)
    p.add_argument("--levels", type=int, nargs="+", default=[1, 2, 3])
    p.add_argument("--n-t0", type=int, default=4, help="n_t on the first level")
    return parser


def _config_from_args(args):
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        if args.command == "solve":
            rep = cmd_solve(cfg)
            print(json.dumps({k: v for k, v in rep.to_dict().items()
                              if k not in ("residual_history", "inner_per_block")}, indent=2))
            if not rep.converged:
                print(f"outer solver did not converge: residual {rep.final_residual:.3e} "
                      f"after {rep.outer_iterations} iterations", file=sys.stderr)
                return EXIT_NOT_CONVERGED
            return EXIT_OK
        if args.command == "eigs":
            summary, _ = cmd_eigs(cfg)
            data = summary.__dict__.copy()
            data["all_hold"] = summary.all_hold
            print(json.dumps(data, indent=2))
            return EXIT_OK if summary.all_hold else EXIT_CHECK_FAILED
        if args.command == "scaling":
            rep = cmd_scaling(cfg, args.worker_list, args.mode, args.a, args.oversubscribe)
            print(json.dumps(rep.to_dict(), indent=2))
            if not all(r.converged for r in rep.reports):
                return EXIT_NOT_CONVERGED
            return EXIT_OK
        rep = cmd_convergence(cfg, args.levels, args.n_t0)
        for row in zip(rep.levels, rep.n_t, rep.dofs, rep.errors):
            print("level {} n_t {:3d} dofs {:8d} error {:.3e}".format(*row))
        return EXIT_OK if rep.monotone else EXIT_CHECK_FAILED
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
