"""Why the all-at-once system can be solved one time block at a time.

Replacing the backward-Euler time-stepping matrix by its circulant neighbour
makes the whole space-time operator block circulant.  A discrete Fourier
transform in time then splits it into independent frequency blocks G_j, each
the size of a single time step.  This script builds the dense operators on
the coarsest mesh and checks the split numerically.
"""

import numpy as np
import scipy.linalg as sla

from pint_stokes.mesh_fem import assemble_operators, build_hierarchy
from pint_stokes.precond_stokes import assemble_Gj
from pint_stokes.spectra import time_fourier_matrix
from pint_stokes.system import AllAtOnceOperator
from pint_stokes.time_diag import TimeGrid, circulant_spectrum

ops = assemble_operators(build_hierarchy(1, 1), 1, nu=1.0)
grid = TimeGrid(n_t=5, T=1.0)
beta = 1e-2
A = AllAtOnceOperator(ops, grid, beta)
print(f"{grid.n_blocks} time blocks, {ops.n_v} velocity and {ops.n_p} pressure unknowns "
      f"per block, {A.layout.size} unknowns in total")

# The circulant version differs from the true operator by a low-rank wrap-around term.
rank = np.linalg.matrix_rank(A.to_dense() - A.to_dense(circulant=True))
print(f"rank of (true - circulant) operator: {rank} (at most 2 n_v = {2 * ops.n_v})")

# Fourier transform in time, then regroup the unknowns frequency by frequency.
F = time_fourier_matrix(A.layout)
perm = A.layout.block_permutation()
D = (F @ A.to_dense(circulant=True) @ F.conj().T)[np.ix_(perm, perm)]
d = circulant_spectrum(grid).d
print("circulant eigenvalues d_j:", np.round(d, 3))
blocks = sla.block_diag(*[assemble_Gj(ops, dj, grid.tau, beta) for dj in d])
print(f"max |F P_C F^H - blockdiag(G_j)| = {np.abs(D - blocks).max():.2e}")
