import numpy as np
import pytest

from buot.ot import (
    TransportPlan,
    kl_divergence,
    plan_entropy,
    scaling_uot,
    sinkhorn_balanced,
    uot_objective,
)


def random_probability(rng, n):
    h = rng.random(n) + 0.05
    return h / h.sum()


def naive_sinkhorn(mu, nu, cost, epsilon, n_iter):
    """Unstabilized multiplicative Sinkhorn, the independent reference."""
    kernel = np.exp(-np.asarray(cost) / epsilon)
    a = np.ones(len(mu))
    b = np.ones(len(nu))
    for _ in range(n_iter):
        a = mu / (kernel @ b)
        b = nu / (kernel.T @ a)
    return a[:, None] * kernel * b[None, :]


class TestTransportPlan:
    def test_marginals_are_recomputed(self):
        plan = TransportPlan(np.array([[0.2, 0.3], [0.1, 0.4]]))
        np.testing.assert_allclose(plan.row_marginal, [0.5, 0.5])
        np.testing.assert_allclose(plan.col_marginal, [0.3, 0.7])
        assert plan.total_mass == pytest.approx(1.0)

    def test_rejects_negative_and_nonfinite(self):
        with pytest.raises(ValueError):
            TransportPlan(np.array([[0.5, -0.1], [0.3, 0.3]]))
        with pytest.raises(ValueError):
            TransportPlan(np.array([[np.nan, 0.1], [0.3, 0.3]]))


class TestSinkhornBalanced:
    def test_single_point_mass(self):
        plan = sinkhorn_balanced([1.0], [1.0], [[0.0]], 0.1)
        np.testing.assert_allclose(plan.values, [[1.0]])
        assert plan.converged

    def test_dominant_diagonal(self):
        cost = [[0.0, 1.0], [1.0, 0.0]]
        plan = sinkhorn_balanced([0.5, 0.5], [0.5, 0.5], cost, 0.01, max_iter=2000, tol=1e-10)
        np.testing.assert_allclose(plan.values, [[0.5, 0.0], [0.0, 0.5]], atol=1e-3)

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(11)
        mu = random_probability(rng, 5)
        nu = random_probability(rng, 7)
        cost = rng.random((5, 7))
        plan = sinkhorn_balanced(mu, nu, cost, 0.1, max_iter=20000, tol=1e-14)
        reference = naive_sinkhorn(mu, nu, cost, 0.1, 20000)
        np.testing.assert_allclose(plan.values, reference, atol=1e-8)

    def test_marginal_residual_within_tol_when_converged(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n, m = rng.integers(2, 21), rng.integers(2, 21)
            mu = random_probability(rng, n)
            nu = random_probability(rng, m)
            cost = rng.random((n, m))
            plan = sinkhorn_balanced(mu, nu, cost, 0.2, max_iter=5000, tol=1e-8)
            assert plan.converged
            assert np.max(np.abs(plan.row_marginal - mu)) <= 1e-8
            assert np.max(np.abs(plan.col_marginal - nu)) <= 1e-8
            assert np.all(plan.values >= 0) and np.all(np.isfinite(plan.values))

    def test_strictly_positive_entries(self):
        plan = sinkhorn_balanced([0.5, 0.5], [0.5, 0.5], [[0.0, 1.0], [1.0, 0.0]], 0.5)
        assert np.all(plan.values > 0)

    def test_zero_mass_entry_gives_zero_row(self):
        plan = sinkhorn_balanced([0.0, 1.0], [0.5, 0.5], [[0.0, 1.0], [1.0, 0.0]], 0.3)
        assert np.all(plan.values[0] == 0.0)
        np.testing.assert_allclose(plan.values[1].sum(), 1.0, atol=1e-8)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            sinkhorn_balanced([0.5, 0.5], [1.0], [[0.0], [1.0], [2.0]], 0.1)

    def test_nonpositive_epsilon_rejected(self):
        with pytest.raises(ValueError):
            sinkhorn_balanced([1.0], [1.0], [[0.0]], 0.0)

    def test_non_probability_rejected(self):
        with pytest.raises(ValueError):
            sinkhorn_balanced([0.5, 0.6], [0.5, 0.5], [[0.0, 1.0], [1.0, 0.0]], 0.1)


class TestScalingUot:
    def test_ot_limit_matches_balanced_marginals(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            n, m = rng.integers(2, 13), rng.integers(2, 13)
            mu = random_probability(rng, n)
            nu = random_probability(rng, m)
            cost = rng.random((n, m))
            plan = scaling_uot(mu, nu, cost, 0.25, 1e6, max_iter=20000, tol=1e-10)
            assert np.max(np.abs(plan.row_marginal - mu)) <= 1e-3
            assert np.max(np.abs(plan.col_marginal - nu)) <= 1e-3

    def test_outlier_row_ships_almost_nothing(self):
        # second row is expensive to ship; with a soft marginal it keeps its mass
        plan = scaling_uot([1.0, 0.01], [1.0], [[0.0], [10.0]], 0.05, 1.0, max_iter=5000)
        shipped = plan.values[1, 0]
        assert shipped < 0.01 * 0.01

    def test_outlier_objective_matches_mesh_search(self):
        mu, nu = np.array([1.0, 0.01]), np.array([1.0])
        cost = np.array([[0.0], [10.0]])
        eps, beta = 0.05, 1.0
        plan = scaling_uot(mu, nu, cost, eps, beta, max_iter=20000, tol=1e-13)
        value = uot_objective(plan.values, mu, nu, cost, eps, beta)
        # refine a 2-entry mesh around the solver's answer
        center, scale = plan.values.copy(), 0.1
        best = value
        grid = np.linspace(-1.0, 1.0, 11)
        for _ in range(10):
            cands = []
            for d0 in grid:
                for d1 in grid:
                    cand = center + scale * np.array([[d0], [d1]])
                    if (cand < 0).any():
                        continue
                    cands.append((uot_objective(cand, mu, nu, cost, eps, beta), cand))
            vmin, cmin = min(cands, key=lambda t: t[0])
            best = min(best, vmin)
            center, scale = cmin, scale * 0.4
        assert value <= best + 1e-9

    def test_random_objective_matches_mesh_search_2x2(self):
        rng = np.random.default_rng(21)
        mu, nu = rng.random(2) + 0.2, rng.random(2) + 0.2
        cost = rng.random((2, 2))
        eps, beta = 0.05, 1.0
        plan = scaling_uot(mu, nu, cost, eps, beta, max_iter=20000, tol=1e-13)
        value = uot_objective(plan.values, mu, nu, cost, eps, beta)
        center, scale, best = plan.values.copy(), 0.1, value
        grid = np.linspace(-1.0, 1.0, 7)
        for _ in range(10):
            cands = []
            for d00 in grid:
                for d01 in grid:
                    for d10 in grid:
                        for d11 in grid:
                            cand = center + scale * np.array([[d00, d01], [d10, d11]])
                            if (cand < 0).any():
                                continue
                            cands.append((uot_objective(cand, mu, nu, cost, eps, beta), cand))
            vmin, cmin = min(cands, key=lambda t: t[0])
            best = min(best, vmin)
            center, scale = cmin, scale * 0.4
        assert abs(value - best) <= 1e-3 * max(abs(best), 1e-12)

    def test_objective_checkpoints_non_increasing(self):
        rng = np.random.default_rng(9)
        for seed in range(5):
            rng = np.random.default_rng(seed)
            n, m = rng.integers(3, 9), rng.integers(3, 9)
            mu, nu = rng.random(n) + 0.1, rng.random(m) + 0.1
            cost = rng.random((n, m)) * 2
            plan = scaling_uot(mu, nu, cost, 0.1, 2.0, max_iter=500, objective_every=10)
            trace = np.asarray(plan.objective_trace)
            assert np.all(np.diff(trace) <= 1e-9)

    def test_log_domain_branch_small_epsilon(self):
        # cost/eps far beyond exp range: must still converge, finite, nonneg
        rng = np.random.default_rng(3)
        mu, nu = random_probability(rng, 4), random_probability(rng, 5)
        cost = rng.random((4, 5)) * 4.0
        plan = scaling_uot(mu, nu, cost, 0.004, 1.0, max_iter=4000, tol=1e-9)
        assert np.all(np.isfinite(plan.values)) and np.all(plan.values >= 0)
        assert plan.total_mass > 0

    def test_log_and_multiplicative_branches_agree(self):
        # same instance solved on both sides of the branch threshold by
        # rescaling (cost, eps, beta) together, which leaves the problem
        # unchanged up to the objective's overall scale
        rng = np.random.default_rng(13)
        mu, nu = rng.random(5) + 0.1, rng.random(6) + 0.1
        cost = rng.random((5, 6))
        fast = scaling_uot(mu, nu, cost, 0.004, 0.08, max_iter=30000, tol=1e-12)  # max ratio < 200
        slow = scaling_uot(mu, nu, cost * 100, 0.4, 8.0, max_iter=30000, tol=1e-12)  # > 200
        np.testing.assert_allclose(fast.values, slow.values, atol=1e-8)

    def test_zero_mass_rows_stay_zero(self):
        plan = scaling_uot([0.0, 1.0], [0.5, 0.5], [[0.0, 1.0], [1.0, 0.0]], 0.1, 1.0)
        assert np.all(plan.values[0] == 0.0)

    def test_empty_marginal_returns_zero_plan(self):
        plan = scaling_uot([0.0, 0.0], [0.5, 0.5], [[0.0, 1.0], [1.0, 0.0]], 0.1, 1.0)
        assert np.all(plan.values == 0.0)
        assert plan.converged

    def test_nonpositive_beta_rejected(self):
        with pytest.raises(ValueError):
            scaling_uot([1.0], [1.0], [[0.0]], 0.1, 0.0)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            scaling_uot([0.5, 0.5], [1.0], [[0.0]], 0.1, 1.0)

    def test_warm_start_reaches_same_fixed_point(self):
        rng = np.random.default_rng(17)
        mu, nu = rng.random(6) + 0.1, rng.random(6) + 0.1
        cost = rng.random((6, 6))
        cold = scaling_uot(mu, nu, cost, 0.05, 1.0, max_iter=20000, tol=1e-12)
        warm = scaling_uot(mu, nu, cost, 0.05, 1.0, max_iter=20000, tol=1e-12, init_duals=cold.duals)
        np.testing.assert_allclose(cold.values, warm.values, atol=1e-10)
        assert warm.n_iter <= cold.n_iter


class TestPlanEntropy:
    def test_single_entry(self):
        assert plan_entropy([[1.0]]) == pytest.approx(1.0)

    def test_all_zeros(self):
        assert plan_entropy(np.zeros((2, 2))) == 0.0

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(2)
        p = rng.random((3, 3))
        expected = 0.0
        for i in range(3):
            for j in range(3):
                expected -= p[i, j] * (np.log(p[i, j]) - 1.0)
        assert plan_entropy(p) == pytest.approx(expected, rel=1e-12)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            plan_entropy([[np.nan]])


class TestKlDivergence:
    def test_identical_is_zero(self):
        assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_hand_computed_two_entries(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(np.log(2.0))

    def test_hand_computed_unnormalized(self):
        expected = 0.2 * np.log(0.5) - 0.2 + 0.4
        assert kl_divergence([0.2], [0.4]) == pytest.approx(expected)

    def test_support_violation_is_infinite(self):
        assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == np.inf

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            kl_divergence([-0.1, 1.1], [0.5, 0.5])

    def test_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            n = rng.integers(1, 10)
            p = rng.random(n) + 1e-3
            q = rng.random(n) + 1e-3
            value = kl_divergence(p, q)
            assert value >= 0.0
            if np.max(np.abs(p - q)) <= 1e-14:
                assert value == 0.0
            assert kl_divergence(p, p) == 0.0
