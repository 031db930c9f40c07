import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgsta import lmi, sdp, synthesis, trailer
from mgsta.errors import AllInfeasible, Infeasible, NonzeroInitialDisturbance, SingularBK2, SingularMatrix

from conftest import scalar_design, scalar_plant


def test_trailer_theta_close_to_reference(trailer_result):
    assert trailer_result.status == "optimal"
    assert abs(trailer_result.theta - trailer.REFERENCE_THETA) / trailer.REFERENCE_THETA < 0.10


def test_tiny_omega_is_infeasible():
    with pytest.raises(Infeasible):
        synthesis.solve_inner(scalar_plant(), scalar_design(omega=1e-9))


def test_nonzero_initial_disturbance_rejected():
    with pytest.raises(NonzeroInitialDisturbance):
        synthesis.solve_inner(scalar_plant(), scalar_design(), f0=[0.1])


def test_recover_gains_zero_w():
    K0, K1, K2 = synthesis.recover_gains(np.eye(2), np.eye(2), np.zeros((1, 2)), np.zeros((1, 2)), 1)
    np.testing.assert_array_equal(K0, 0.0)


def test_recover_gains_identity_split():
    X = np.array([[2.0, 0.5, 0, 0], [0.5, 1.0, 0, 0], [0, 0, 3.0, 0], [0, 0, 0, 1.0]])
    _, K1, K2 = synthesis.recover_gains(np.eye(1), X, X[:4, :4][:4], np.zeros((4, 1)), 2)
    K = np.hstack([K1, K2])
    np.testing.assert_allclose(K, np.eye(4), atol=1e-14)


def test_recover_gains_scalar():
    K0, _, _ = synthesis.recover_gains(np.array([[3.0]]), np.eye(2), np.zeros((1, 2)), np.array([[6.0]]), 1)
    assert K0[0, 0] == pytest.approx(2.0)


def test_recover_gains_singular():
    with pytest.raises(SingularMatrix):
        synthesis.recover_gains(np.zeros((1, 1)), np.eye(2), np.zeros((1, 2)), np.zeros((1, 1)), 1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_reference_gains_round_trip(seed):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(4, 4))
    Q = G @ G.T + np.eye(4)
    G = rng.normal(size=(4, 4))
    X = G @ G.T + np.eye(4)
    K = np.hstack([trailer.REFERENCE_K1, trailer.REFERENCE_K2])
    K0, K1, K2 = synthesis.recover_gains(Q, X, K @ X, trailer.REFERENCE_K0 @ Q, 2)
    np.testing.assert_allclose(K0, trailer.REFERENCE_K0, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(K1, trailer.REFERENCE_K1, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(K2, trailer.REFERENCE_K2, rtol=1e-10, atol=1e-10)


def test_delta_identity():
    d, per, _ = synthesis.compute_delta([np.eye(2)], np.eye(2), 1.0)
    assert d == pytest.approx(1.0)


def test_delta_scaled():
    d, _, _ = synthesis.compute_delta([2 * np.eye(2)], np.eye(2), 0.5)
    assert d == pytest.approx(4.0)


def test_delta_singular():
    with pytest.raises(SingularBK2) as exc:
        synthesis.compute_delta([np.eye(2), np.diag([1.0, 0.0])], np.eye(2), 1.0)
    assert exc.value.vertex == 1


def test_delta_reference_gain(trailer_plant):
    d, per, _ = synthesis.compute_delta(trailer_plant, trailer.REFERENCE_K2, 4.0)
    assert np.min(np.abs(per - trailer.REFERENCE_DELTA) / trailer.REFERENCE_DELTA) < 0.01
    assert d >= trailer.FDOT_BOUND
    assert d == pytest.approx(per.min())


def test_result_invariants(trailer_result, trailer_design):
    res = trailer_result
    S, P = res.S, res.P
    z0 = trailer_design.zeta0
    x0s = synthesis.initial_scaled_state(trailer_design)
    assert res.theta >= z0 @ S @ z0 - 1e-9
    assert res.theta >= x0s @ P @ x0s - 1e-9
    # gain-magnitude bound K'K < omega P
    assert np.linalg.eigvalsh(res.omega * P - res.K.T @ res.K)[0] > 0
    assert res.worst_margin >= -1e-6
    assert all(c.passed for c in res.checks)


def test_initial_scaled_state_zero_sigma():
    d = scalar_design(sigma0=0.0)
    np.testing.assert_array_equal(synthesis.initial_scaled_state(d), [0.0, 0.0])


def test_initial_scaled_state_convention():
    d = scalar_design(alpha=2.0, sigma0=4.0)
    x = synthesis.initial_scaled_state(d)
    np.testing.assert_allclose(x, [(0.5 + 2.0) * 4.0, 0.0])


def test_result_json_round_trip(tmp_path, trailer_result):
    path = tmp_path / "r.json"
    synthesis.save_result(trailer_result, path)
    back = synthesis.load_result(path)
    assert back.theta == trailer_result.theta
    np.testing.assert_array_equal(back.K2, trailer_result.K2)
    np.testing.assert_array_equal(back.Q, trailer_result.Q)
    assert len(back.checks) == len(trailer_result.checks)


def test_single_point_grid_matches_inner():
    plant, design = scalar_plant(), scalar_design()
    inner = synthesis.solve_inner(plant, design, synthesis.SEARCH_SETTINGS)
    best, rows = synthesis.outer_search(plant, design, synthesis.SearchGrid.single(design.alpha, design.rho))
    assert len(rows) == 1
    assert best.theta == pytest.approx(inner.theta, rel=1e-9)


def test_search_argmin_and_landscape(tmp_path):
    plant, design = scalar_plant(), scalar_design()
    grid = synthesis.SearchGrid((1.0, 8.0), (0.25, 4.0), 3, 3, refine_passes=1)
    best, rows = synthesis.outer_search(plant, design, grid)
    feasible = [r.theta for r in rows if math.isfinite(r.theta)]
    assert best.theta <= min(feasible) + 1e-12
    np.testing.assert_allclose([(r.alpha, r.rho) for r in rows[:9]], grid.points(), rtol=1e-9)
    path = tmp_path / "land.csv"
    synthesis.export_landscape(rows, path)
    with open(path) as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == len(rows)
    assert set(table[0]) == {"alpha", "rho", "theta", "status", "stage"}


def test_search_all_infeasible():
    grid = synthesis.SearchGrid((1.0, 2.0), (0.5, 1.0), 2, 2, refine_passes=0)
    with pytest.raises(AllInfeasible):
        synthesis.outer_search(scalar_plant(), scalar_design(omega=1e-9), grid)


def test_search_parallel_matches_serial():
    plant, design = scalar_plant(), scalar_design()
    grid = synthesis.SearchGrid((1.0, 8.0), (0.25, 4.0), 2, 2, refine_passes=0)
    a, ra = synthesis.outer_search(plant, design, grid, workers=1)
    b, rb = synthesis.outer_search(plant, design, grid, workers=2)
    assert [r.theta for r in ra] == pytest.approx([r.theta for r in rb], rel=1e-9)


def test_grid_validation():
    from mgsta.errors import InvalidParams

    with pytest.raises(InvalidParams):
        synthesis.SearchGrid((2.0, 1.0), (0.1, 1.0))
    g = synthesis.SearchGrid()
    assert len(g.points()) == 64
    assert g.alphas()[0] == pytest.approx(1.0) and g.alphas()[-1] == pytest.approx(100.0)
