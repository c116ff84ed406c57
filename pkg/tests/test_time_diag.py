import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from pint_stokes.errors import ConfigurationError
from pint_stokes.linalg import BlockLayout
from pint_stokes.precond_stokes import assemble_Gj
from pint_stokes.spectra import time_fourier_matrix
from pint_stokes.system import AllAtOnceOperator
from pint_stokes.time_diag import (TimeGrid, block_fft_forward, block_fft_inverse,
                                   circulant_block_solve, circulant_matrix,
                                   circulant_spectrum, from_block_diagonal_order,
                                   to_block_diagonal_order)


def test_spectrum_two_blocks():
    np.testing.assert_allclose(circulant_spectrum(TimeGrid(3, 1.0)).d, [0, 2], atol=1e-15)


def test_spectrum_four_blocks():
    d = circulant_spectrum(TimeGrid(5, 1.0)).d
    np.testing.assert_allclose(d, [0, 1 + 1j, 2, 1 - 1j], atol=1e-15)


@pytest.mark.parametrize("n_t", [3, 4, 7, 16, 33])
def test_spectrum_has_exact_zero_and_matches_dense_eigenvalues(n_t):
    d = circulant_spectrum(TimeGrid(n_t, 1.0)).d
    assert np.any(d == 0)
    ev = np.linalg.eigvals(circulant_matrix(n_t - 1))
    np.testing.assert_allclose(np.sort_complex(np.round(d, 12)),
                               np.sort_complex(np.round(ev, 12)), atol=1e-10)


def test_time_grid_validation():
    with pytest.raises(ConfigurationError):
        TimeGrid(2, 1.0)
    with pytest.raises(ConfigurationError):
        TimeGrid(5, 0.0)
    g = TimeGrid(5, 10.0)
    assert g.tau == 2.0 and g.n_blocks == 4
    np.testing.assert_allclose(g.times(), [2, 4, 6, 8])


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 9), nv=st.integers(1, 5), npr=st.integers(1, 3),
       seed=st.integers(0, 2**31 - 1))
def test_fft_round_trip(n, nv, npr, seed):
    lay = BlockLayout(n, nv, npr)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(lay.size) + 1j * rng.standard_normal(lay.size)
    np.testing.assert_allclose(block_fft_inverse(block_fft_forward(x, lay), lay), x,
                               atol=1e-13)


def test_constant_in_time_lives_on_zero_frequency(rng):
    lay = BlockLayout(6, 3, 2)
    per_time = rng.standard_normal(2 * (3 + 2))
    x = lay.assemble(*[np.tile(part, (6, 1)) for part in
                       np.split(per_time, [3, 5, 8])])
    y = lay.to_blocks(block_fft_forward(x, lay))
    assert np.abs(y[1:]).max() < 1e-13
    assert np.abs(y[0]).max() > 0


def test_fft_matches_dense_dft(rng):
    lay = BlockLayout(4, 2, 1)
    x = rng.standard_normal(lay.size)
    F = time_fourier_matrix(lay)
    np.testing.assert_allclose(block_fft_forward(x, lay), F @ x, atol=1e-14)


def test_block_order_round_trip(rng):
    lay = BlockLayout(5, 4, 3)
    x = rng.standard_normal(lay.size)
    np.testing.assert_array_equal(from_block_diagonal_order(to_block_diagonal_order(x, lay), lay), x)


def test_block_order_hand_enumerated():
    # two time blocks, one velocity and one pressure DOF:
    # field-major [v1, v2, p1, p2, l1, l2, m1, m2] -> [v1, l1, p1, m1, v2, l2, p2, m2]
    lay = BlockLayout(2, 1, 1)
    np.testing.assert_array_equal(lay.block_permutation(), [0, 4, 2, 6, 1, 5, 3, 7])
    x = np.arange(8.0)
    np.testing.assert_array_equal(to_block_diagonal_order(x, lay).ravel(),
                                  [0, 4, 2, 6, 1, 5, 3, 7])


def test_block_order_is_bijection():
    perm = BlockLayout(7, 5, 2).block_permutation()
    np.testing.assert_array_equal(np.sort(perm), np.arange(perm.size))


def test_diagonalization_identity(ops1):
    grid = TimeGrid(5, 1.0)
    A = AllAtOnceOperator(ops1, grid, 1e-2)
    lay = A.layout
    PC = A.to_dense(circulant=True)
    F = time_fourier_matrix(lay)
    perm = lay.block_permutation()
    D = (F @ PC @ F.conj().T)[np.ix_(perm, perm)]
    expected = sla.block_diag(*[assemble_Gj(ops1, dj, grid.tau, 1e-2)
                                for dj in circulant_spectrum(grid).d])
    assert np.abs(D - expected).max() <= 1e-10 * np.abs(expected).max()


def test_circulant_difference_has_low_rank(ops1):
    A = AllAtOnceOperator(ops1, TimeGrid(5, 1.0), 1e-2)
    R = A.to_dense() - A.to_dense(circulant=True)
    assert np.linalg.matrix_rank(R) <= 2 * ops1.n_v


@pytest.mark.parametrize("symmetry", [True, False])
def test_block_solve_applies_inverse_circulant(ops1, symmetry, rng):
    grid = TimeGrid(6, 1.0)
    A = AllAtOnceOperator(ops1, grid, 1e-2)
    d = circulant_spectrum(grid).d
    G = [assemble_Gj(ops1, dj, grid.tau, 1e-2) for dj in d]
    r = rng.standard_normal(A.layout.size)
    y, infos, timings = circulant_block_solve(
        r, A.layout, lambda j, rj: (np.linalg.solve(G[j], rj), {"iterations": 0}),
        use_conjugate_symmetry=symmetry)
    np.testing.assert_allclose(A.to_dense(circulant=True) @ y, r, atol=1e-10)
    assert not np.iscomplexobj(y)
    assert len(infos) == grid.n_blocks
    assert timings["imag_norm"] < 1e-10 * np.linalg.norm(y)
