import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from pint_stokes.errors import ConfigurationError
from pint_stokes.linalg import read_matrix_market
from pint_stokes.mesh_fem import (DOMAIN_MEASURE, assemble_hierarchy, assemble_operators,
                                  build_hierarchy, build_transfer, export_matrix_market,
                                  load_vector)
from pint_stokes.system import cavity_wind


# ---------------------------------------------------------------------------
# hierarchy

def test_single_level_counts():
    mesh = build_hierarchy(1, 1)
    assert len(mesh.levels) == 1
    g = mesh.levels[0]
    assert g.n_cells == 4
    assert g.coordinates(2).shape[0] == 25
    assert g.coordinates(1).shape[0] == 9


def test_five_levels_finest_spacing():
    mesh = build_hierarchy(1, 5)
    assert len(mesh.levels) == 5
    assert mesh.levels[-1].h == pytest.approx(1.0 / 16.0)


def test_fine_pair_node_count():
    mesh = build_hierarchy(5, 6)
    assert mesh.levels[-1].coordinates(2).shape[0] == 129 ** 2


def test_invalid_levels_rejected():
    with pytest.raises(ConfigurationError):
        build_hierarchy(3, 2)
    with pytest.raises(ConfigurationError):
        build_hierarchy(0, 2)


@pytest.mark.parametrize("level", [1, 2, 3])
def test_nested_refinement(level):
    mesh = build_hierarchy(level, level + 1)
    coarse, fine = mesh.levels
    assert fine.n_cells == 4 * coarse.n_cells
    fine_pts = {tuple(np.round(p, 12)) for p in fine.coordinates(1)}
    assert all(tuple(np.round(p, 12)) in fine_pts for p in coarse.coordinates(1))
    # cells are axis-aligned squares of side h
    xy = fine.coordinates(1)
    conn = fine.connectivity(1)
    corners = xy[conn]  # (cells, 4, 2) in order (0,0),(1,0),(0,1),(1,1)
    np.testing.assert_allclose(corners[:, 1] - corners[:, 0], [[fine.h, 0.0]] * fine.n_cells)
    np.testing.assert_allclose(corners[:, 2] - corners[:, 0], [[0.0, fine.h]] * fine.n_cells)


# ---------------------------------------------------------------------------
# operators

def test_level1_mass_spd_and_divergence_of_constants(ops1):
    M = ops1.M.toarray()
    assert np.abs(M - M.T).max() < 1e-14
    assert np.linalg.eigvalsh(M).min() > 0
    B_all = ops1.full["B_all"]
    n2 = B_all.shape[1] // 2
    for comp in range(2):
        c = np.zeros(2 * n2)
        c[comp * n2:(comp + 1) * n2] = 1.0
        assert np.abs(B_all @ c).max() < 1e-14


def test_level2_mass_sum_is_twice_area(ops2):
    M_full = ops2.full["M"]
    one = np.ones(M_full.shape[0])
    assert one @ (M_full @ one) == pytest.approx(2 * DOMAIN_MEASURE, abs=1e-12)


def test_cavity_wind_convection_is_skew():
    ops = assemble_operators(build_hierarchy(1, 2), 2, 1e-2, cavity_wind)
    S = (ops.N + ops.N.T).toarray()
    assert np.abs(S).sum(axis=1).max() < 1e-10
    assert ops.has_wind


def test_stokes_operators_have_no_convection(ops2):
    assert not ops2.has_wind
    np.testing.assert_allclose(ops2.L.toarray(), ops2.K.toarray())


def test_semidefinite_before_and_definite_after_pinning(ops2):
    K_full = ops2.full["K"].toarray()
    Kp_full = ops2.full["Kp"].toarray()
    assert np.linalg.eigvalsh(K_full).min() > -1e-12
    assert np.linalg.eigvalsh(Kp_full).min() > -1e-12
    assert np.linalg.eigvalsh(ops2.Kp.toarray()).min() > 1e-10
    assert np.linalg.eigvalsh(ops2.Mp.toarray()).min() > 0


@pytest.mark.parametrize("level", [1, 2, 3])
def test_random_mass_quadratic_forms_positive(level, rng):
    ops = assemble_operators(build_hierarchy(1, level), level, 1.0)
    X = rng.standard_normal((100, ops.n_v))
    assert np.all(np.einsum("ij,ij->i", X, (ops.M @ X.T).T) > 0)


@pytest.mark.parametrize("level", [1, 2])
def test_divergence_full_row_rank(level):
    ops = assemble_operators(build_hierarchy(1, level), level, 1.0)
    s = np.linalg.svd(ops.B.toarray(), compute_uv=False)
    assert s.size == ops.n_p
    assert s.min() > 1e-10


def test_inf_sup_sanity(ops2):
    B = ops2.B.toarray()
    S = B @ np.linalg.solve(ops2.M.toarray(), B.T)
    lam = sla.eigvalsh(S, ops2.Mp.toarray())
    assert lam.min() >= 1e-3


@pytest.mark.parametrize("level,n_v,n_p", [(1, 18, 8), (2, 98, 24), (3, 450, 80)])
def test_dof_counts(level, n_v, n_p):
    ops = assemble_operators(build_hierarchy(1, level), level, 1.0)
    assert (ops.n_v, ops.n_p) == (n_v, n_p)


def test_nonpositive_viscosity_rejected():
    with pytest.raises(ConfigurationError):
        assemble_operators(build_hierarchy(1, 1), 1, 0.0)


def test_load_vector_of_constant_integrates_area(ops2):
    b = load_vector(ops2.grid, lambda x, y, t: (np.ones_like(x), 2 * np.ones_like(x)), 0.0)
    n2 = b.size // 2
    assert b[:n2].sum() == pytest.approx(DOMAIN_MEASURE)
    assert b[n2:].sum() == pytest.approx(2 * DOMAIN_MEASURE)


# ---------------------------------------------------------------------------
# transfer

def _quadratic_hat(node, n_cells, x):
    """1D piecewise-quadratic nodal basis function of coarse node ``node``."""
    hc = 2.0 / n_cells
    out = np.zeros_like(x)
    for i, xi in enumerate(x):
        e = min(int((xi + 1.0) // hc), n_cells - 1)
        local = node - 2 * e
        if not 0 <= local <= 2:
            continue
        nodes = -1.0 + hc * (e + np.array([0.0, 0.5, 1.0]))
        others = [k for k in range(3) if k != local]
        out[i] = np.prod([(xi - nodes[k]) / (nodes[local] - nodes[k]) for k in others])
    return out


@pytest.mark.parametrize("level", [1, 2])
def test_prolongation_preserves_constants(level):
    mesh = build_hierarchy(level, level + 1)
    tr = build_transfer(mesh, level)
    for P in (tr.P_vel_full, tr.P_p_full):
        np.testing.assert_allclose(P @ np.ones(P.shape[1]), np.ones(P.shape[0]), atol=1e-14)


def test_prolongation_of_hat_matches_basis_evaluation():
    mesh = build_hierarchy(1, 2)
    tr = build_transfer(mesh, 1)
    coarse, fine = mesh.levels
    m_c = coarse.nodes_per_side(2)
    ix, iy = 1, 2  # a mid-edge node of the coarse grid
    e = np.zeros(tr.P_vel_full.shape[1])
    e[iy * m_c + ix] = 1.0
    got = (tr.P_vel_full @ e)[: fine.coordinates(2).shape[0]]
    xy = fine.coordinates(2)
    expected = (_quadratic_hat(ix, coarse.cells_per_side, xy[:, 0])
                * _quadratic_hat(iy, coarse.cells_per_side, xy[:, 1]))
    np.testing.assert_allclose(got, expected, atol=1e-14)


def test_prolongation_gram_spd():
    tr = build_transfer(build_hierarchy(1, 2), 1)
    for P in (tr.P_vel, tr.P_p):
        G = (P.T @ P).toarray()
        assert np.linalg.eigvalsh(G).min() > 0


@pytest.mark.parametrize("level", [1, 2, 3])
def test_geometric_coarse_operator_consistency(level):
    h = assemble_hierarchy(level, level + 1, 1.0)
    P = h.P_vel[0]
    Kc = h.ops[0].K
    Kg = P.T @ h.ops[1].K @ P
    rel = np.abs((Kg - Kc).toarray()).sum(1).max() / np.abs(Kc.toarray()).sum(1).max()
    assert rel <= 0.5


def test_matrix_market_round_trip(tmp_path, ops1):
    path = tmp_path / "M.mtx"
    export_matrix_market(path, ops1.M, comment="mass")
    back = read_matrix_market(path).to_scipy()
    assert (abs(back - ops1.M) > 0).nnz == 0
    assert sp.issparse(back)
