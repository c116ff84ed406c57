"""Eigenvalues of the preconditioned system on a tiny problem.

With the exact circulant preconditioner almost every eigenvalue of the
preconditioned operator equals one; the few outliers come from the low-rank
wrap-around term.  The practical preconditioners spread the spectrum over a
bounded interval away from zero.  The spectra are written to a CSV file for
plotting.
"""

import sys

import numpy as np

from pint_stokes.spectra import (UNIT_TOL, preconditioned_spectra, verify_spectral_counts,
                                 write_spectra_csv)

spectra = preconditioned_spectra(n_t=10, level=1)
mu = spectra["PC_A"]
print(f"{np.mean(np.abs(mu - 1) < UNIT_TOL):.1%} of {mu.size} eigenvalues equal one")
for name, lam in spectra.items():
    mags = np.abs(lam)
    print(f"{name:10s} |eig| in [{mags.min():.3f}, {mags.max():.3f}]")

summary = verify_spectral_counts(n_t=6, level=1)
print(f"counts at n_t = 6: unit {summary.unit_count} (bound {summary.unit_bound}), "
      f"interval {summary.hat_count} (bound {summary.hat_bound}), all hold: {summary.all_hold}")

path = sys.argv[1] if len(sys.argv) > 1 else "spectra.csv"
write_spectra_csv(path, spectra)
print("spectra written to", path)
