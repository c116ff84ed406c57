"""Oseen flow in a cavity: the preconditioner copes with convection and small beta.

The wind is a fixed vortex field.  Each frequency block uses a block-triangular
preconditioner whose velocity part runs a few Uzawa steps and whose pressure
part uses a shifted-mass Schur approximation.  Outer iteration counts should
stay flat as the regularisation parameter beta shrinks.
"""

from pint_stokes.config import RunConfig
from pint_stokes.driver import cmd_solve

for beta in (1e-1, 1e-3, 1e-4):
    r = cmd_solve(RunConfig(problem="oseen_cavity", preconditioner="oseen_uz",
                            level=3, n_t=15, beta=beta))
    print(f"beta {beta:7.0e}: outer {r.outer_iterations:2d}, inner average "
          f"{r.inner_average:4.1f}, converged {r.converged}, {r.timings['total']:.1f} s")
