import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from qsvmlab.dataset import LabeledSet
from qsvmlab.dual_solver import (
    KKT_TOL,
    DualSolution,
    NonConvexError,
    NonConvergence,
    PreconditionError,
    build_q,
    daniel_bound_check,
    decision_from_row,
    decision_value,
    dual_objective,
    kkt_residual,
    solve_box_qp,
    solve_dual,
    training_decisions,
)
from qsvmlab.kernel import KernelAccess, exact_gram
from qsvmlab.statevector import DimensionError, FeatureMapConfig


def random_problem(seed, m):
    r = np.random.default_rng(seed)
    G = r.normal(size=(m, max(1, m // 2)))
    K = G @ G.T / m
    y = np.where(r.random(m) < 0.5, -1, 1)
    return K, y


def lbfgs_oracle(H, c, upper=None):
    m = len(c)
    res = minimize(lambda x: 0.5 * x @ H @ x - c @ x, np.zeros(m), jac=lambda x: H @ x - c,
                   bounds=[(0, upper)] * m, method="L-BFGS-B", options={"ftol": 1e-15, "gtol": 1e-12})
    return res.x


class TestBuildQ:
    def test_positive_labels(self, rng):
        K = rng.random((3, 3))
        assert np.array_equal(build_q(K, [1, 1, 1]), K)

    def test_label_flip_invariance(self, rng):
        K = rng.random((4, 4))
        y = np.array([1, -1, 1, -1])
        assert np.array_equal(build_q(K, y), build_q(K, -y))

    def test_two_by_two(self):
        Q = build_q([[1, 0.5], [0.5, 1]], [1, -1])
        assert Q.tolist() == [[1, -0.5], [-0.5, 1]]

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            build_q(np.eye(3), [1, -1])


class TestSolveDual:
    def test_scalar(self):
        s = solve_dual([[1.0]], [1], 0.1)
        assert s.alpha[0] == pytest.approx(10 / 11, abs=1e-12)

    @pytest.mark.parametrize("y", [[1, 1], [1, -1], [-1, -1]])
    def test_identity_kernel_decouples(self, y):
        np.testing.assert_allclose(solve_dual(np.eye(2), y, 0.1).alpha, [10 / 11] * 2, atol=1e-12)

    def test_two_point_instance(self):
        # both coordinates free: (Q + λI) α = 1 with row sums 1.1 - 0.5
        s = solve_dual([[1, 0.5], [0.5, 1]], [1, -1], 0.1)
        np.testing.assert_allclose(s.alpha, [5 / 3, 5 / 3], atol=1e-12)

    def test_two_point_grid_oracle(self):
        K, y, lam = np.array([[1, 0.5], [0.5, 1]]), np.array([1, -1]), 0.1
        g = np.arange(0, 3.0001, 0.01)
        A, B = np.meshgrid(g, g, indexing="ij")
        H = build_q(K, y) + lam * np.eye(2)
        f = 0.5 * (H[0, 0] * A**2 + 2 * H[0, 1] * A * B + H[1, 1] * B**2) - A - B
        i, j = np.unravel_index(np.argmin(f), f.shape)
        np.testing.assert_allclose(solve_dual(K, y, lam).alpha, [g[i], g[j]], atol=1e-2)

    def test_active_constraint(self):
        # same-label near-duplicates: one coefficient may be driven to zero
        K = np.array([[1.0, 0.99, 0.0], [0.99, 1.0, 0.0], [0.0, 0.0, 1.0]])
        s = solve_dual(K, [1, 1, -1], 1e-3)
        assert np.all(s.alpha >= 0) and s.kkt_residual <= KKT_TOL

    @given(seed=st.integers(0, 10**6), m=st.integers(1, 25), lam=st.sampled_from([1e-3, 1e-2, 0.1, 1.0]))
    @settings(max_examples=60, deadline=None)
    def test_kkt_and_local_optimality(self, seed, m, lam):
        K, y = random_problem(seed, m)
        s = solve_dual(K, y, lam)
        assert np.all(s.alpha >= 0) and s.kkt_residual <= KKT_TOL
        f0 = dual_objective(K, y, lam, s.alpha)
        assert f0 == pytest.approx(s.objective_value, abs=1e-12)
        for i in range(m):
            for d in (1e-4, -1e-4):
                a = s.alpha.copy()
                a[i] = max(a[i] + d, 0.0)
                assert dual_objective(K, y, lam, a) >= f0 - 1e-13

    @given(seed=st.integers(0, 10**6), m=st.integers(2, 20))
    @settings(max_examples=30, deadline=None)
    def test_matches_bounded_quasi_newton(self, seed, m):
        K, y = random_problem(seed, m)
        H = build_q(K, y) + 0.1 * np.eye(m)
        np.testing.assert_allclose(solve_dual(K, y, 0.1).alpha, lbfgs_oracle(H, np.ones(m)), atol=1e-5)

    def test_nonconvex_guard(self):
        K = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(NonConvexError, match="increase the shot count"):
            solve_dual(K, [1, 1], 0.1)

    def test_lambda_must_be_positive(self):
        with pytest.raises(ValueError):
            solve_dual(np.eye(2), [1, 1], 0.0)

    def test_json_round_trip(self, rng):
        K, y = random_problem(3, 6)
        s = solve_dual(K, y, 0.1)
        back = DualSolution.from_json(s.to_json())
        assert back.alpha.tobytes() == s.alpha.tobytes() and back.lam == 0.1


class TestBoxQP:
    @given(seed=st.integers(0, 10**6), m=st.integers(1, 15), u=st.sampled_from([0.05, 0.5, 2.0]))
    @settings(max_examples=40, deadline=None)
    def test_upper_bounds(self, seed, m, u):
        K, y = random_problem(seed, m)
        H = build_q(K, y) + 1e-2 * np.eye(m)
        x, _ = solve_box_qp(H, np.ones(m), upper=u)
        assert np.all((x >= 0) & (x <= u))
        assert kkt_residual(H, np.ones(m), x, u) <= KKT_TOL
        np.testing.assert_allclose(x, lbfgs_oracle(H, np.ones(m), u), atol=1e-5)

    def test_iteration_cap(self):
        K, y = random_problem(1, 10)
        with pytest.raises(NonConvergence):
            solve_box_qp(build_q(K, y) + 0.1 * np.eye(10), np.ones(10), max_iter=1)


class TestDecision:
    def test_zero_alpha(self):
        data = LabeledSet([[0.1, 0.2], [0.3, 0.4]], [1, -1])
        s = DualSolution(np.zeros(2), 0.0, 0.0, 0.1)
        assert decision_value(s, data, [0.5, 0.5]) == 0.0

    def test_lone_training_point(self):
        data = LabeledSet([[0.2, 0.7]], [1])
        s = solve_dual([[1.0]], [1], 0.1)
        assert decision_value(s, data, [0.2, 0.7]) == pytest.approx(10 / 11, abs=1e-12)

    def test_matches_resummation(self, rng):
        cfg = FeatureMapConfig(3)
        data = LabeledSet(rng.random((5, 3)), [1, -1, 1, 1, -1])
        K = exact_gram(data.X, cfg)
        s = solve_dual(K, data.y, 0.1)
        x = rng.random(3)
        row = exact_gram(np.vstack([x, data.X]), cfg)[0, 1:]
        want = sum(a * yy * k for a, yy, k in zip(s.alpha, data.y, row))
        assert decision_value(s, data, x, cfg=cfg) == pytest.approx(want, abs=1e-12)
        assert decision_from_row(s.alpha, data.y, row) == pytest.approx(want, abs=1e-12)

    def test_training_decisions_noisy_rows_are_keyed(self, rng):
        data = LabeledSet(rng.random((4, 2)), [1, -1, 1, -1])
        K = exact_gram(data.X, FeatureMapConfig(2))
        a = solve_dual(K, data.y, 0.1).alpha
        np.testing.assert_allclose(training_decisions(a, data.y, K), K @ (a * data.y))
        acc = KernelAccess(100, 3)
        h = training_decisions(a, data.y, K, acc)
        assert h[2] == pytest.approx((a * data.y) @ acc.sample(K[2], "predict", 2), abs=0)

    def test_dimension_mismatch(self):
        data = LabeledSet([[0.1, 0.2]], [1])
        with pytest.raises(DimensionError):
            decision_value(solve_dual([[1.0]], [1], 0.1), data, [0.1])


class TestDaniel:
    def test_unperturbed(self):
        K, y = random_problem(0, 6)
        r = daniel_bound_check(K, K, y, 0.1)
        assert r.lhs == 0 and r.rhs == 0 and r.satisfied

    def test_half_mu_perturbation(self, rng):
        K, y = random_problem(4, 8)
        mu = np.linalg.eigvalsh(build_q(K, y) + 0.1 * np.eye(8))[0]
        E = rng.normal(size=(8, 8))
        E = E + E.T
        E *= 0.5 * mu / np.abs(np.linalg.eigvalsh(E)).max()
        r = daniel_bound_check(K, K + E, y, 0.1)
        assert r.epsilon == pytest.approx(0.5 * mu) and r.satisfied

    def test_precondition(self):
        K, y = random_problem(1, 4)
        with pytest.raises(PreconditionError):
            daniel_bound_check(K, K + 5 * np.eye(4), y, 0.1)
