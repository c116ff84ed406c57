import csv
import json

import numpy as np
import pytest

from pint_stokes.errors import ConfigurationError
from pint_stokes.spectra import (INTERVAL_SLACK, UNIT_TOL, block_bounds,
                                 circulant_preconditioner_dense, preconditioned_spectra,
                                 time_fourier_matrix, verify_spectral_counts,
                                 write_spectra_csv)
from pint_stokes.precond_stokes import assemble_Gj
from pint_stokes.system import AllAtOnceOperator
from pint_stokes.time_diag import TimeGrid, circulant_spectrum


@pytest.fixture(scope="module")
def summary():
    return verify_spectral_counts(n_t=6, level=1)


def test_fourier_matrix_unitary():
    from pint_stokes.linalg import BlockLayout

    F = time_fourier_matrix(BlockLayout(5, 2, 1))
    np.testing.assert_allclose(F @ F.conj().T, np.eye(F.shape[0]), atol=1e-14)


def test_circulant_assembly_from_blocks_matches_operator(ops1):
    grid = TimeGrid(5, 1.0)
    A = AllAtOnceOperator(ops1, grid, 1e-2)
    blocks = [assemble_Gj(ops1, d, grid.tau, 1e-2) for d in circulant_spectrum(grid).d]
    PC = circulant_preconditioner_dense(A.layout, blocks)
    np.testing.assert_allclose(PC, A.to_dense(circulant=True), atol=1e-12)


def test_unit_eigenvalue_count(summary):
    assert summary.unit_count >= summary.unit_bound == summary.N - 2 * summary.n_v


def test_hat_interval_count(summary):
    assert summary.hat_count >= summary.hat_bound == summary.N - 4 * summary.n_v


def test_tilde_interval_count(summary):
    assert summary.tilde_count >= summary.tilde_bound


def test_product_bound(summary):
    assert summary.product_bound_holds
    assert summary.product_min >= summary.a_hat * summary.c - INTERVAL_SLACK
    assert summary.product_max <= summary.b_hat * summary.d + INTERVAL_SLACK
    assert summary.all_hold


def test_measured_block_interval_inside_theoretical(ops1):
    grid = TimeGrid(6, 1.0)
    b = block_bounds(ops1, circulant_spectrum(grid).d, grid.tau, 1e-2)
    assert 1 / np.sqrt(12) - INTERVAL_SLACK <= b["a_hat"] <= b["b_hat"]
    assert b["b_hat"] <= (1 + np.sqrt(5)) / 2 + INTERVAL_SLACK
    assert 0 < b["c"] <= 1.0 <= b["d"]


def test_unit_fraction_exceeds_plateau_threshold():
    spectra = preconditioned_spectra(n_t=10, level=1)
    mu = spectra["PC_A"]
    N = mu.size
    n_v = 18
    fraction = np.mean(np.abs(mu - 1) < UNIT_TOL)
    assert fraction > 1 - 1 / 9 - 2 * n_v / N


def test_symmetric_pencils_give_real_spectra():
    spectra = preconditioned_spectra(n_t=4, level=1)
    for key in ("Phat_A", "Ptilde_PC", "Ptilde_A"):
        assert np.isrealobj(spectra[key])
        assert np.all(np.diff(spectra[key]) <= 0)


def test_size_guards():
    with pytest.raises(ConfigurationError):
        verify_spectral_counts(n_t=11)
    with pytest.raises(ConfigurationError):
        verify_spectral_counts(n_t=4, level=3)


def test_summary_json_and_spectra_csv(tmp_path, summary):
    summary.to_json(tmp_path / "s.json")
    data = json.loads((tmp_path / "s.json").read_text())
    assert data["all_hold"] is True
    assert data["unit_count"] == summary.unit_count

    write_spectra_csv(tmp_path / "s.csv", {"a": np.array([1 + 2j, 3.0]), "b": np.array([0.5])})
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["index", "a_re", "a_im", "b_re", "b_im"]
    assert float(rows[1][2]) == 2.0
    assert rows[2][3] == ""
