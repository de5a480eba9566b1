import io

import numpy as np
import pytest
from oracles import Dense, block_gradient, desk_instance, random_state, random_system
from scipy.sparse.linalg import LinearOperator, cg

from sketchdecomp.operators import ConstraintSystem, Dims, apply_B1
from sketchdecomp.solver import (
    RESIDUAL_NAMES,
    SolverParams,
    SolverState,
    gamma,
    kkt_residuals,
    nuclear_norm,
    project_spectral_ball,
    solve,
    state_gamma,
    sweep,
    update_G,
    update_H,
    update_M,
    update_U,
    update_V,
    update_y,
)

DIMS = Dims(5, 2, 3, 4)
SIGMA = 1.7


@pytest.fixture
def case():
    rng = np.random.default_rng(11)
    return Dense(DIMS), random_state(DIMS, rng), random_system(DIMS, rng), rng


def rel(g, st, system):
    scale = 1 + np.linalg.norm(st.M) + np.linalg.norm(system.R_stack) + np.linalg.norm(system.S_stack)
    return float(np.linalg.norm(g)) / scale


def test_gamma_examples(case):
    D, st, system, rng = case
    z = SolverState.zeros(DIMS)
    assert not state_gamma(z, DIMS).any()
    G = rng.normal(size=DIMS.stack_shape)
    assert not gamma(z.U, z.V, z.y, G, G, DIMS).any()
    np.testing.assert_allclose(state_gamma(st, DIMS), D.gamma(st.U, st.V, st.y, st.G, st.H), rtol=0, atol=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        SolverParams(sigma=0)
    with pytest.raises(ValueError):
        SolverParams(gamma=1.7)
    with pytest.raises(ValueError):
        SolverParams(max_iter=0)
    with pytest.raises(ValueError):
        SolverParams(tol=0)
    SolverParams(gamma=1.618)


def test_update_U_stationary(case):
    D, st, system, _ = case
    st.U = update_U(st, system, SIGMA)
    assert rel(block_gradient(D, st, system, SIGMA, "U"), st, system) <= 1e-9


def test_update_U_matches_cg(case):
    D, st, system, _ = case
    U = update_U(st, system, SIGMA)
    # normal equations sigma B1 B1^T U = B1 (M + sigma C) - R, solved generically
    C = D.gamma(np.zeros(DIMS.eq_shape), st.V, st.y, st.G, st.H)
    rhs = (D.B1 @ D.flat(st.M + SIGMA * C) - system.R_stack.reshape(-1, DIMS.w)).ravel(order="F")
    k = D.B1.shape[0]

    def mv(u):
        Um = u.reshape(k, DIMS.w, order="F")
        return (SIGMA * D.B1 @ (D.B1.T @ Um)).ravel(order="F")

    op = LinearOperator((rhs.size, rhs.size), matvec=mv)
    sol, info = cg(op, rhs, rtol=1e-14, atol=0, maxiter=1000)
    assert info == 0
    np.testing.assert_allclose(U.reshape(k, DIMS.w), sol.reshape(k, DIMS.w, order="F"), rtol=0, atol=1e-8)


def test_update_U_zero():
    dims = DIMS
    sys0 = ConstraintSystem(dims, np.zeros(dims.eq_shape), np.zeros(dims.ineq_shape))
    assert not update_U(SolverState.zeros(dims), sys0, 1.0).any()


def test_update_V_kkt(case):
    D, st, system, rng = case
    for _ in range(5):
        st.M = rng.normal(size=DIMS.stack_shape) * 3
        st.V = update_V(st, system, SIGMA)
        assert st.V.min() >= 0
        g = block_gradient(D, st, system, SIGMA, "V")
        assert rel(np.minimum(st.V, g), st, system) <= 1e-9


def test_update_V_large_S_clamps(case):
    D, st, system, _ = case
    big = ConstraintSystem(DIMS, system.R_stack, np.full(DIMS.ineq_shape, 1e6))
    assert not update_V(st, big, SIGMA).any()


def test_update_V_interior_is_unconstrained(case):
    D, st, system, _ = case
    low = ConstraintSystem(DIMS, system.R_stack, np.full(DIMS.ineq_shape, -1e3))
    V = update_V(st, low, SIGMA)
    assert V.min() > 0
    st.V = V
    assert rel(block_gradient(D, st, low, SIGMA, "V"), st, low) <= 1e-9


def test_update_G_examples():
    dims = Dims(3, 1, 2, 2)
    sys0 = ConstraintSystem(dims, np.zeros(dims.eq_shape), np.zeros(dims.ineq_shape))
    st = SolverState.zeros(dims)
    st.H = np.ones(dims.stack_shape)  # D = -H = -ones
    np.testing.assert_array_equal(update_G(st, sys0, 1.0), np.ones(dims.stack_shape))
    st.H = -100 * np.ones(dims.stack_shape)
    assert not update_G(st, sys0, 1.0).any()


def test_update_G_probe(case):
    D, st, system, rng = case
    st.G = update_G(st, system, SIGMA)
    best = D.lagrangian(st, system, SIGMA)
    g = block_gradient(D, st, system, SIGMA, "G")
    assert rel(np.minimum(st.G, g), st, system) <= 1e-9
    for _ in range(1000):
        probe = st.copy()
        probe.G = np.maximum(st.G + rng.normal(size=DIMS.stack_shape) * rng.uniform(1e-3, 1), 0)
        assert D.lagrangian(probe, system, SIGMA) >= best - 1e-9


def test_projection_examples():
    rng = np.random.default_rng(0)
    Q1, _ = np.linalg.qr(rng.normal(size=(6, 2)))
    Q2, _ = np.linalg.qr(rng.normal(size=(3, 2)))
    X = Q1 @ np.diag([3.0, 0.5]) @ Q2.T
    P = project_spectral_ball(X)
    np.testing.assert_allclose(np.linalg.svd(P, compute_uv=False)[:2], [1.0, 0.5], atol=1e-12)
    np.testing.assert_allclose(P, Q1 @ np.diag([1.0, 0.5]) @ Q2.T, atol=1e-12)
    inside = X / 4
    np.testing.assert_allclose(project_spectral_ball(inside), inside, rtol=0, atol=1e-12)


def test_projection_is_nearest():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(12, 4)) * 2
    P = project_spectral_ball(X)
    d0 = np.linalg.norm(X - P)
    for _ in range(1000):
        Z = rng.normal(size=X.shape)
        Z /= max(1.0, np.linalg.norm(Z, 2)) * rng.uniform(1, 3)
        assert d0 <= np.linalg.norm(X - Z) + 1e-12


def test_update_H(case):
    D, st, system, _ = case
    st.H = update_H(st, system, SIGMA)
    assert np.linalg.norm(D.flat(st.H), 2) <= 1 + 1e-10


def test_update_y_stationary(case):
    D, st, system, _ = case
    st.y = update_y(st, system, SIGMA)
    assert rel(block_gradient(D, st, system, SIGMA, "y"), st, system) <= 1e-9


def test_update_y_matches_dense_solve(case):
    D, st, system, _ = case
    F = D.gamma(st.U, st.V, np.zeros(DIMS.rowsum_shape), st.G, st.H)
    rhs = -(D.B3 @ D.flat(st.M + SIGMA * F) @ np.ones(DIMS.w))
    y = np.linalg.solve(SIGMA * DIMS.w * D.B3 @ D.B3.T, rhs)
    np.testing.assert_allclose(update_y(st, system, SIGMA).ravel(), y, rtol=0, atol=1e-10)


def test_update_y_d2():
    dims = Dims(3, 1, 2, 5)
    rng = np.random.default_rng(3)
    sys0 = ConstraintSystem(dims, np.zeros(dims.eq_shape), np.zeros(dims.ineq_shape))
    st = SolverState.zeros(dims)
    st.M = rng.normal(size=dims.stack_shape)
    rhs = -(st.M[:, :, 0] - st.M[:, :, 1]).sum(axis=-1)
    np.testing.assert_allclose(update_y(st, sys0, 2.0)[..., 0], rhs / (2 * 2.0 * 5), atol=1e-14)


def test_update_M(case):
    D, st, system, _ = case
    fixed = SolverState.zeros(DIMS)
    fixed.M = st.M
    np.testing.assert_array_equal(update_M(fixed, system, SIGMA, 1.618), st.M)
    fixed.G = np.ones(DIMS.stack_shape)  # Gamma = ones
    np.testing.assert_allclose(update_M(fixed, system, 2.0, 0.5), st.M + 1)


def test_sweep_zero_fixed_point():
    sys0 = ConstraintSystem(DIMS, np.zeros(DIMS.eq_shape), np.zeros(DIMS.ineq_shape))
    st = sweep(SolverState.zeros(DIMS), sys0, SolverParams())
    for name in ("U", "V", "y", "G", "H", "M"):
        assert not getattr(st, name).any()
    assert st.iteration == 1


def test_sweep_projection_contracts(case):
    _, st, system, _ = case
    for _ in range(20):
        st = sweep(st, system, SolverParams(sigma=SIGMA))
        assert st.V.min() >= 0 and st.G.min() >= 0
        assert np.linalg.norm(st.H.reshape(DIMS.lam, DIMS.w), 2) <= 1 + 1e-10


def test_zero_instance_solve():
    sys0 = ConstraintSystem(DIMS, np.zeros(DIMS.eq_shape), np.zeros(DIMS.ineq_shape))
    res = solve(sys0)
    assert res.converged and res.iterations == 1
    assert not res.M.any()
    assert res.residuals.max() == 0


@pytest.fixture(scope="module")
def desk():
    return desk_instance(5, n=16, flows=8)


def test_residuals_decrease(desk):
    *_, system, truth = desk
    res = solve(system, SolverParams(tol=1e-15, max_iter=500))
    hist = {h["iteration"]: max(h[k] for k in RESIDUAL_NAMES) for h in res.history}
    assert hist[500] * 10 <= hist[10]


def test_solve_deterministic(desk):
    *_, system, truth = desk
    a = solve(system, SolverParams(max_iter=60, tol=1e-15))
    b = solve(system, SolverParams(max_iter=60, tol=1e-15))
    assert np.array_equal(a.M, b.M)
    assert a.history == b.history


def test_solve_beats_ground_truth(desk):
    *_, system, truth = desk
    p = SolverParams(tol=1e-4)
    res = solve(system, p)
    assert res.converged
    star = nuclear_norm(truth, system.dims)
    assert nuclear_norm(res.M, system.dims) <= star + p.tol * (1 + star)
    # the dual coupling residual ends below tol in the scaled problem
    Gam = state_gamma(res.state, system.dims)
    assert np.linalg.norm(Gam) <= p.tol * (1 + np.linalg.norm(res.state.M))


def test_history_csv_and_resume(desk):
    *_, system, truth = desk
    res = solve(system, SolverParams(max_iter=30, tol=1e-15))
    buf = io.StringIO()
    res.write_history_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "iteration," + ",".join(RESIDUAL_NAMES) + ",objective,dual_objective"
    assert len(lines) == 31
    assert not res.converged
    # resuming from a checkpoint continues the exact same trajectory
    half = solve(system, SolverParams(max_iter=15, tol=1e-15))
    back = SolverState.from_dict(half.state.to_dict())
    rest = solve(system, SolverParams(max_iter=15, tol=1e-15), state=back)
    assert rest.iterations == 30
    np.testing.assert_array_equal(rest.M, res.M)


def test_kkt_feasible_point_has_zero_primal_residuals(desk):
    *_, system, truth = desk
    st = SolverState.zeros(system.dims)
    st.M = truth
    res, nuc, _ = kkt_residuals(st, system)
    assert res.r_eq == res.r_ineq == res.r_rowsum == res.r_nonneg == 0
    assert nuc == pytest.approx(nuclear_norm(truth, system.dims))
    assert np.array_equal(apply_B1(truth, system.dims), system.R_stack)
