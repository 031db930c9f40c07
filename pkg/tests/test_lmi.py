import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgsta import analysis, lmi, model
from mgsta.errors import DimensionMismatch, InvalidScalar, MissingVariable

from conftest import scalar_plant


def random_point(layout, rng):
    r, n, m = layout.r, layout.n, layout.m
    Q = rng.normal(size=(r, r))
    X = rng.normal(size=(2 * n, 2 * n))
    return {
        "Q": Q + Q.T,
        "X": X + X.T,
        "Y": rng.normal(size=(m, 2 * n)),
        "W": rng.normal(size=(m, r)),
        "zd": rng.uniform(0.1, 2.0, 4),
        "theta": float(rng.uniform(0, 5)),
    }


def pack(layout, p):
    return layout.pack(p["Q"], p["X"], p["Y"], p["W"], p["zd"], p["theta"])


def random_plant(rng, r, n, m, N=2):
    verts = []
    for _ in range(N):
        verts.append({
            "A": rng.normal(size=(r, r)), "E": rng.normal(size=(r, n)), "C": rng.normal(size=(n, r)),
            "D": rng.normal(size=(n, n)), "B": rng.normal(size=(n, m)),
        })
    return model.make_polytope(verts)


# dense oracles written straight from the block formulas, with no affine machinery


def blocks(n):
    I, Z = np.eye(n), np.zeros((n, n))
    A0 = np.block([[Z, Z], [I, Z]])
    E0 = np.vstack([0.5 * I, Z])
    F0 = np.vstack([Z, I])
    G0 = np.hstack([I, Z])
    return A0, E0, F0, G0


def dense65(v, p, alpha, rho, gamma):
    n = v.D.shape[0]
    A0, E0, F0, G0 = blocks(n)
    X, Y = p["X"], p["Y"]
    B0 = np.vstack([v.B, np.zeros_like(v.B)])
    Zd = np.kron(np.diag(p["zd"]), np.eye(n))
    St = np.vstack([E0.T, F0.T, G0, G0])
    top = A0 @ X + B0 @ Y + X @ A0.T + Y.T @ B0.T + rho * X + St.T @ Zd @ St
    off = np.vstack([v.B @ Y, G0 @ X / gamma, v.D @ G0 @ X / alpha, np.zeros((n, 2 * n))])
    return np.block([[top, off.T], [off, -Zd]])


def dense66(v, p, alpha, rho, H, J):
    n, q = v.D.shape[0], H.shape[0]
    G0 = blocks(n)[3]
    Q, X, W = p["Q"], p["X"], p["W"]
    mid = X @ G0.T @ v.E.T / alpha
    low = H @ Q + J @ W
    return np.block([
        [v.A @ Q + Q @ v.A.T + rho * Q, mid.T, low.T],
        [mid, -rho * X, np.zeros((2 * n, q))],
        [low, np.zeros((q, 2 * n)), -np.eye(q)],
    ])


def dense67(v, p, alpha, rho, H, J):
    n, q = v.D.shape[0], H.shape[0]
    Q, W = p["Q"], p["W"]
    mid = v.C @ Q + v.B @ W
    low = H @ Q + J @ W
    return np.block([
        [rho * Q, mid.T, low.T],
        [mid, p["zd"][3] * np.eye(n), np.zeros((n, q))],
        [low, np.zeros((q, n)), alpha * np.eye(q)],
    ])


def test_lmi65_size_trailer(trailer_plant):
    L = lmi.VariableLayout.for_plant(trailer_plant)
    e = lmi.build_lmi65(trailer_plant, 0, 11.0, 2.1, 4.0, L)
    assert e.size == 12
    assert e.sense is lmi.ND


def test_lmi65_homogeneous(trailer_plant):
    L = lmi.VariableLayout.for_plant(trailer_plant)
    e = lmi.build_lmi65(trailer_plant, 3, 11.0, 2.1, 4.0, L)
    np.testing.assert_array_equal(lmi.eval_expr(e, np.zeros(L.size)), np.zeros((12, 12)))


def test_lmi65_scalar_hand_assembly():
    plant = scalar_plant(B=1.0, D=0.0)
    L = lmi.VariableLayout.for_plant(plant)
    k = 3.0
    p = {"Q": np.eye(1), "X": np.eye(2), "Y": np.array([[-k, 0.0]]), "W": np.zeros((1, 1)), "zd": np.ones(4), "theta": 0.0}
    M = lmi.eval_expr(lmi.build_lmi65(plant, 0, 1.0, 1.0, 1.0, L), pack(L, p))
    # hand-written 6x6: top = A0 + A0' + B0 Y + Y'B0' + I + St'St with St'St = diag(1/4 + 1 + 1, 1)
    top = np.array([[-2 * k + 1 + 2.25, 1.0], [1.0, 1 + 1.0]])
    off = np.array([[-k, 0], [1, 0], [0, 0], [0, 0]])
    ref = np.block([[top, off.T], [off, -np.eye(4)]])
    np.testing.assert_allclose(M, ref, atol=1e-14)


def test_lmi66_size_and_constant(trailer_plant, trailer_design):
    L = lmi.VariableLayout.for_plant(trailer_plant)
    e = lmi.build_lmi66(trailer_plant, 0, 11.0, 2.1, trailer_design.H, trailer_design.J, L)
    assert e.size == 14
    expected = np.zeros((14, 14))
    expected[8:, 8:] = -np.eye(6)
    np.testing.assert_array_equal(e.const, expected)


def test_lmi66_zero_cost_rows(trailer_plant, rng):
    L = lmi.VariableLayout.for_plant(trailer_plant)
    H, J = np.zeros((6, 4)), np.zeros((6, 2))
    M = lmi.eval_expr(lmi.build_lmi66(trailer_plant, 0, 11.0, 2.1, H, J, L), pack(L, random_point(L, rng)))
    np.testing.assert_array_equal(M[8:, :8], 0.0)
    np.testing.assert_array_equal(M[8:, 8:], -np.eye(6))


def test_lmi67_size_constant_and_coupling_block(trailer_plant, trailer_design):
    L = lmi.VariableLayout.for_plant(trailer_plant)
    e = lmi.build_lmi67(trailer_plant, 2, 2.1, 11.0, L.index("kappa"), trailer_design.H, trailer_design.J, L)
    assert e.size == 12
    np.testing.assert_array_equal(e.const, np.diag(np.r_[np.zeros(6), np.full(6, 11.0)]))
    p = {"Q": np.eye(4), "X": np.eye(4), "Y": np.zeros((2, 4)), "W": np.zeros((2, 4)), "zd": np.ones(4), "theta": 0.0}
    M = lmi.eval_expr(e, pack(L, p))
    np.testing.assert_allclose(M[4:6, :4], trailer_plant[2].C, atol=1e-14)


def test_lmi68_blocks(trailer_design):
    L = lmi.VariableLayout(4, 2, 2)
    ez, ex = lmi.build_lmi68(trailer_design.zeta0, np.ones(4), L)
    assert ez.size == 5 and ex.size == 5
    assert ez.sense is lmi.PD


def test_lmi68_scalar_schur():
    L = lmi.VariableLayout(1, 1, 1)
    ez, _ = lmi.build_lmi68([2.0], [0.0, 0.0], L)
    for theta, ok in ((4.1, True), (3.9, False)):
        p = {"Q": np.eye(1), "X": np.eye(2), "Y": np.zeros((1, 2)), "W": np.zeros((1, 1)), "zd": np.ones(4), "theta": theta}
        M = lmi.eval_expr(ez, pack(L, p))
        assert (np.linalg.eigvalsh(M)[0] > 0) == ok


def test_lmi68_zero_initial_state_feasible():
    L = lmi.VariableLayout(1, 1, 1)
    ez, ex = lmi.build_lmi68([0.0], [0.0, 0.0], L)
    p = {"Q": np.eye(1), "X": np.eye(2), "Y": np.zeros((1, 2)), "W": np.zeros((1, 1)), "zd": np.ones(4), "theta": 0.01}
    for e in (ez, ex):
        assert np.linalg.eigvalsh(lmi.eval_expr(e, pack(L, p)))[0] > 0


def test_lmi72_size_and_scalar_schur():
    L = lmi.VariableLayout(4, 2, 2)
    assert lmi.build_lmi72(50.0, L).size == 6
    L1 = lmi.VariableLayout(1, 1, 1)
    e = lmi.build_lmi72(1.0, L1)
    for y, ok in (([0.5, 0.5], True), ([0.8, 0.7], False)):
        p = {"Q": np.eye(1), "X": np.eye(2), "Y": np.array([y]), "W": np.zeros((1, 1)), "zd": np.ones(4), "theta": 0.0}
        assert (np.linalg.eigvalsh(lmi.eval_expr(e, pack(L1, p)))[0] > 0) == ok


def test_lmi72_zero_gain_reduces_to_x():
    L = lmi.VariableLayout(1, 1, 1)
    e = lmi.build_lmi72(2.0, L)
    p = {"Q": np.eye(1), "X": np.eye(2), "Y": np.zeros((1, 2)), "W": np.zeros((1, 1)), "zd": np.ones(4), "theta": 0.0}
    assert np.linalg.eigvalsh(lmi.eval_expr(e, pack(L, p)))[0] == pytest.approx(1.0)


def test_nonpositive_scalars_rejected(trailer_plant):
    L = lmi.VariableLayout.for_plant(trailer_plant)
    with pytest.raises(InvalidScalar):
        lmi.build_lmi65(trailer_plant, 0, -1.0, 2.1, 4.0, L)
    with pytest.raises(InvalidScalar):
        lmi.build_lmi72(0.0, L)


def test_cost_matrix_shape_checked(trailer_plant):
    L = lmi.VariableLayout.for_plant(trailer_plant)
    with pytest.raises(DimensionMismatch):
        lmi.build_lmi66(trailer_plant, 0, 1.0, 1.0, np.eye(4), np.zeros((3, 2)), L)


def test_eval_expr_basic():
    c = np.diag([1.0, 2.0])
    e = lmi.AffineMatrixExpr(c, {0: np.eye(2)}, lmi.PD, 1)
    np.testing.assert_array_equal(lmi.eval_expr(e, [0.0]), c)
    np.testing.assert_array_equal(lmi.eval_expr(e, {0: 3.0}), c + 3 * np.eye(2))
    with pytest.raises(MissingVariable):
        lmi.eval_expr(e, {})


def test_random_expression_against_dense(rng):
    mats = [rng.normal(size=(4, 4)) for _ in range(7)]
    mats = [m + m.T for m in mats]
    e = lmi.AffineMatrixExpr(mats[0], {j: mats[j + 1] for j in range(6)}, lmi.ND, 6)
    y = rng.normal(size=6)
    ref = mats[0] + sum(y[j] * mats[j + 1] for j in range(6))
    np.testing.assert_allclose(lmi.eval_expr(e, y), ref, atol=1e-12)


def test_layout_pack_roundtrip(rng):
    L = lmi.VariableLayout(3, 2, 3)
    p = random_point(L, rng)
    u = L.unpack(pack(L, p))
    for k in ("Q", "X", "Y", "W", "zd"):
        np.testing.assert_array_equal(u[k], p[k])
    assert u["theta"] == p["theta"]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 2), st.integers(0, 1), st.integers(0, 2**31 - 1))
def test_builders_match_dense_oracle(r, n, extra_m, seed):
    rng = np.random.default_rng(seed)
    m = n + extra_m
    plant = random_plant(rng, r, n, m)
    L = lmi.VariableLayout.for_plant(plant)
    p = random_point(L, rng)
    y = pack(L, p)
    alpha, rho, gamma = rng.uniform(0.5, 5, 3)
    q = r + 1
    H, J = rng.normal(size=(q, r)), rng.normal(size=(q, m))
    for i, v in enumerate(plant):
        M65 = lmi.eval_expr(lmi.build_lmi65(plant, i, alpha, rho, gamma, L), y)
        np.testing.assert_allclose(M65, dense65(v, p, alpha, rho, gamma), atol=1e-12 * (1 + np.abs(M65).max()))
        M66 = lmi.eval_expr(lmi.build_lmi66(plant, i, alpha, rho, H, J, L), y)
        np.testing.assert_allclose(M66, dense66(v, p, alpha, rho, H, J), atol=1e-12 * (1 + np.abs(M66).max()))
        M67 = lmi.eval_expr(lmi.build_lmi67(plant, i, rho, alpha, None, H, J, L), y)
        np.testing.assert_allclose(M67, dense67(v, p, alpha, rho, H, J), atol=1e-12 * (1 + np.abs(M67).max()))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_linearity_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    plant = random_plant(rng, 2, 1, 2)
    L = lmi.VariableLayout.for_plant(plant)
    a, b = (pack(L, random_point(L, rng)) for _ in range(2))
    for e in (lmi.build_lmi65(plant, 0, 2.0, 1.0, 3.0, L), lmi.build_lmi72(2.0, L)):
        lhs = lmi.eval_expr(e, a + b) - lmi.eval_expr(e, a) - lmi.eval_expr(e, b) + lmi.eval_expr(e, np.zeros(L.size))
        np.testing.assert_allclose(lhs, 0.0, atol=1e-12 * (1 + np.abs(lmi.eval_expr(e, a)).max()))
        M = lmi.eval_expr(e, a)
        assert np.linalg.norm(M - M.T) <= 1e-12 * np.linalg.norm(M)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=8, max_size=8), st.integers(0, 2**31 - 1))
def test_convex_combination_closure(weights, seed):
    from mgsta import trailer

    plant = trailer.build_trailer_polytope()
    rng = np.random.default_rng(seed)
    lam = np.array(weights) / np.sum(weights)
    L = lmi.VariableLayout.for_plant(plant)
    y = pack(L, random_point(L, rng))
    mixed = sum(lam[i] * lmi.eval_expr(lmi.build_lmi65(plant, i, 11.0, 2.1, 4.0, L), y) for i in range(8))
    direct = lmi.eval_expr(lmi.build_lmi65(plant, model.combine(plant, lam), 11.0, 2.1, 4.0, L), y)
    np.testing.assert_allclose(mixed, direct, atol=1e-10 * np.abs(direct).max())


def test_congruence_with_analysis_form(trailer_plant, trailer_result):
    """The vertex LMI at the solver point and the gain/certificate form agree in sign."""
    L = lmi.VariableLayout.for_plant(trailer_plant)
    res = trailer_result
    y = L.pack(res.Q, res.X, res.Y, res.W, res.zd, res.theta)
    for i, v in enumerate(trailer_plant):
        M = lmi.eval_expr(lmi.build_lmi65(trailer_plant, i, res.alpha, res.rho, res.gamma, L), y)
        assert np.linalg.eigvalsh(M)[-1] < 0
        N43 = analysis.lemma2_matrix(v, res.K, res.P, res.zd, res.alpha, res.rho, res.gamma)
        assert np.linalg.eigvalsh(N43)[-1] < 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_congruence_equivalence_random(seed):
    """Schur plus congruence: LMI 65 < 0 iff the gain form < 0 for PD X."""
    rng = np.random.default_rng(seed)
    plant = random_plant(rng, 1, 1, 1, N=1)
    L = lmi.VariableLayout.for_plant(plant)
    p = random_point(L, rng)
    G = rng.normal(size=(2, 2))
    p["X"] = G @ G.T + 0.1 * np.eye(2)
    # bias towards feasibility: a stabilising-looking gain half of the time
    if seed % 2:
        p["Y"] = -np.abs(rng.normal(size=(1, 2))) * 5 * np.sign(plant[0].B[0, 0])
    alpha, rho, gamma = 3.0, 0.5, 2.0
    M = dense65(plant[0], p, alpha, rho, gamma)
    P = np.linalg.inv(p["X"])
    K = p["Y"] @ P
    N = analysis.lemma2_matrix(plant[0], K, P, p["zd"], alpha, rho, gamma)
    lam_M = np.linalg.eigvalsh(M)[-1]
    lam_N = np.linalg.eigvalsh(N)[-1]
    if min(abs(lam_M), abs(lam_N)) > 1e-9:
        assert (lam_M < 0) == (lam_N < 0)
