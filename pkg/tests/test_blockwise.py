import numpy as np
import pytest

from oracles import five_point_gradient, lbfgs_oracle, loop_objective
from risbeam.blockwise import (BlockwiseProblem, alternate, g_residual, g_step_decrease,
                               gradient_norm, gradients, lipschitz_estimates, objective,
                               q_residual, q_step_decrease, solve_sylvester_psd, update_G,
                               update_Q)
from risbeam.errors import InvalidArgument


def scalar_problem(x=1.0, y=2.0, rho1=0.3, rho2=0.2):
    one = np.ones((1, 1))
    return BlockwiseProblem(x * one, (y * one,), one, (one,), rho1, rho2)


def test_zero_weights_objective():
    prob = BlockwiseProblem.random(seed=1)
    G = np.zeros((6, 5))
    Q = [np.zeros((4, 3))] * 3
    assert objective(prob, G, Q) == pytest.approx(0.5 * sum(np.sum(y ** 2) for y in prob.Y), rel=1e-14)


def test_scalar_objective_and_updates():
    prob = scalar_problem()
    g, q = 0.7, -1.3
    expected = (g * q - 2) ** 2 / 2 + 0.3 * g ** 2 / 2 + 0.2 * q ** 2 / 2
    assert objective(prob, np.array([[g]]), [np.array([[q]])]) == pytest.approx(expected, rel=1e-14)
    assert update_G(prob, [np.array([[q]])])[0, 0] == pytest.approx(q * 2 / (q ** 2 + 0.3), rel=1e-14)
    assert update_Q(prob, np.array([[g]]))[0][0, 0] == pytest.approx(g * 2 / (g ** 2 + 0.2), rel=1e-14)


def test_scalar_lipschitz():
    prob = scalar_problem(x=1.7)
    L_G, _ = lipschitz_estimates(prob, np.array([[0.4]]), [np.array([[-0.9]])])
    assert L_G == pytest.approx(0.81 * 1.7 ** 2, rel=1e-14)


@pytest.mark.parametrize("complex_valued", [False, True])
def test_objective_matches_loop_oracle(complex_valued):
    prob = BlockwiseProblem.random(V=5, r=3, n=3, q=2, d=2, p=2, U=2, seed=3,
                                   complex_valued=complex_valued)
    G, Q = prob.initial_point(4, scale=1.0)
    ref = loop_objective(prob, G, Q)
    assert abs(objective(prob, G, Q) - ref) <= 1e-12 * ref


def test_penalty_dominance():
    prob = BlockwiseProblem.random(seed=5, rho1=1e12)
    _, Q = prob.initial_point(0, scale=1.0)
    G = update_G(prob, Q)
    data = sum(prob.X.T @ y @ (prob.F_S @ q @ f).T for q, f, y in zip(Q, prob.F, prob.Y))
    assert np.linalg.norm(G) <= 1e-9 * np.linalg.norm(data)


@pytest.mark.parametrize("seed", range(5))
def test_updates_are_first_order_optimal(seed):
    prob = BlockwiseProblem.random(seed=seed)
    G, Q = prob.initial_point(seed)
    G = update_G(prob, Q)
    fd = five_point_gradient(lambda g, q: objective(prob, g, q), G, Q)
    assert np.linalg.norm(fd[0]) <= 1e-6
    assert g_residual(prob, G, Q) <= 1e-9
    Q = update_Q(prob, G)
    fd = five_point_gradient(lambda g, q: objective(prob, g, q), G, Q)
    assert np.sqrt(sum(np.linalg.norm(x) ** 2 for x in fd[1:])) <= 1e-6
    assert q_residual(prob, G, Q) <= 1e-9


def test_analytic_gradient_matches_fd():
    prob = BlockwiseProblem.random(seed=9)
    G, Q = prob.initial_point(1, scale=1.0)
    fd = five_point_gradient(lambda g, q: objective(prob, g, q), G, Q)
    gG, gQ = gradients(prob, G, Q)
    for a, b in zip([gG] + gQ, fd):
        np.testing.assert_allclose(a, b, rtol=1e-7, atol=1e-8)


def test_complex_gradient_directional():
    prob = BlockwiseProblem.random(seed=2, complex_valued=True)
    G, Q = prob.initial_point(3, scale=1.0)
    rng = np.random.default_rng(0)
    E = rng.standard_normal(G.shape) + 1j * rng.standard_normal(G.shape)
    gG, _ = gradients(prob, G, Q)
    h = 1e-3
    vals = [objective(prob, G + s * h * E, Q) for s in (-2, -1, 1, 2)]
    fd = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h)
    assert fd == pytest.approx(np.real(np.vdot(E, gG)), rel=1e-8)


def test_sylvester_matches_kronecker_solve(rng):
    A = rng.standard_normal((4, 4))
    B = rng.standard_normal((3, 3))
    P, R = A @ A.T, B @ B.T
    rhs = rng.standard_normal((4, 3))
    Z = solve_sylvester_psd(P, R, 0.5, rhs)
    K = np.kron(R.T, P) + 0.5 * np.eye(12)
    ref = np.linalg.solve(K, rhs.reshape(-1, order="F")).reshape((4, 3), order="F")
    np.testing.assert_allclose(Z, ref, rtol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_half_steps_never_increase(seed):
    prob = BlockwiseProblem.random(seed=seed)
    G, Q = prob.initial_point(seed)
    f = objective(prob, G, Q)
    for _ in range(30):
        Q_new = update_Q(prob, G)
        f_q = objective(prob, G, Q_new)
        assert f_q <= f + 1e-10
        assert q_step_decrease(prob, G, Q, Q_new) == pytest.approx(f - f_q, abs=1e-9)
        Q = Q_new
        G_new = update_G(prob, Q)
        f_g = objective(prob, G_new, Q)
        assert f_g <= f_q + 1e-10
        assert g_step_decrease(prob, Q, G, G_new) == pytest.approx(f_q - f_g, abs=1e-9)
        G, f = G_new, f_g


def test_alternate_trace_and_state():
    prob = BlockwiseProblem.random(seed=11)
    st = alternate(prob, init_seed=0, max_iter=300, tol=1e-12)
    n = st.iterations
    assert len(st.objective_trace) == len(st.grad_norm_trace) == len(st.decrease_trace) == n
    assert all(b <= a + 1e-10 for a, b in zip(st.objective_trace, st.objective_trace[1:]))
    assert st.objective == pytest.approx(objective(prob, st.G, st.Q), rel=1e-12)
    assert st.grad_norm == pytest.approx(gradient_norm(prob, st.G, st.Q), rel=1e-6, abs=1e-12)
    assert (st.L_G, st.L_Q) == lipschitz_estimates(prob, st.G, st.Q)


def test_alternate_matches_reference_updates():
    prob = BlockwiseProblem.random(seed=12, d=2)
    G, Q = prob.initial_point(0)
    st = alternate(prob, init_seed=0, max_iter=5, tol=1e-300)
    for _ in range(5):
        Q = update_Q(prob, G)
        G = update_G(prob, Q)
    np.testing.assert_allclose(st.G, G, rtol=1e-9, atol=1e-12)
    for a, b in zip(st.Q, Q):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_stationary_start_stops_after_one_iteration():
    prob = BlockwiseProblem.random(seed=13)
    pre = alternate(prob, init_seed=0, max_iter=100000, tol=1e-14)
    st = alternate(prob, max_iter=50, tol=1e-10, init=(pre.G, pre.Q))
    assert st.iterations == 1 and st.converged


@pytest.mark.parametrize("maps", ["random", "identity"])
def test_stationarity_and_oracle(maps):
    prob = BlockwiseProblem.random(seed=14, maps=maps)
    G0, Q0 = prob.initial_point(0)
    st = alternate(prob, init_seed=0, max_iter=100000, tol=1e-14)
    assert st.converged
    fd = five_point_gradient(lambda g, q: objective(prob, g, q), st.G, [q.copy() for q in st.Q])
    assert np.sqrt(sum(np.linalg.norm(x) ** 2 for x in fd)) <= 1e-6
    ref = lbfgs_oracle(prob, G0, Q0)
    assert abs(st.objective - ref) <= 1e-6 * abs(ref)


def test_complex_problem_converges():
    prob = BlockwiseProblem.random(seed=15, complex_valued=True)
    st = alternate(prob, init_seed=0, max_iter=100000, tol=1e-14)
    assert st.converged and st.grad_norm <= 1e-6
    assert all(b <= a + 1e-10 for a, b in zip(st.objective_trace, st.objective_trace[1:]))


def _grad_f0(prob, G, Q):
    gG, gQ = gradients(prob, G, Q)
    return gG - prob.rho1 * G, [g - prob.rho2 * q for g, q in zip(gQ, Q)]


def test_lipschitz_zero_Q():
    prob = BlockwiseProblem.random(seed=16)
    G, Q = prob.initial_point(0)
    L_G, _ = lipschitz_estimates(prob, G, [np.zeros_like(q) for q in Q])
    assert L_G == 0.0


def test_lipschitz_probes():
    prob = BlockwiseProblem.random(seed=17)
    G, Q = prob.initial_point(0, scale=1.0)
    L_G, L_Q = lipschitz_estimates(prob, G, Q)
    gG, gQ = _grad_f0(prob, G, Q)
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = 10.0 ** rng.uniform(-4, 2)
        dG = s * rng.standard_normal(G.shape)
        dQ = [s * rng.standard_normal(q.shape) for q in Q]
        gG2, _ = _grad_f0(prob, G + dG, Q)
        _, gQ2 = _grad_f0(prob, G, [q + d for q, d in zip(Q, dQ)])
        assert np.linalg.norm(gG2 - gG) <= L_G * np.linalg.norm(dG) * (1 + 1e-12)
        lhs = np.sqrt(sum(np.linalg.norm(a - b) ** 2 for a, b in zip(gQ2, gQ)))
        rhs = L_Q * np.sqrt(sum(np.linalg.norm(d) ** 2 for d in dQ))
        assert lhs <= rhs * (1 + 1e-12)


def test_argument_validation():
    prob = BlockwiseProblem.random(seed=0)
    with pytest.raises(InvalidArgument):
        alternate(prob, max_iter=0)
    with pytest.raises(InvalidArgument):
        alternate(prob, tol=0)
    with pytest.raises(InvalidArgument):
        objective(prob, np.zeros((2, 2)), [np.zeros((4, 3))] * 3)
    with pytest.raises(InvalidArgument):
        BlockwiseProblem.random(rho1=0)
    with pytest.raises(InvalidArgument):
        BlockwiseProblem.random(maps="diagonal")
