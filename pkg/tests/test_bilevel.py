import numpy as np
import pytest

from buot.bilevel import (
    BilevelConfig,
    buot_objective,
    contract_fast,
    contract_oracle,
    label_aware_cost,
    label_sign_matrix,
    solve_bilevel,
)


def random_predictions(rng, n, k):
    p = rng.random((n, k)) + 1e-3
    return p / p.sum(axis=1, keepdims=True)


def quadruple_loop(ps, pt, plan, over, squared_euclidean=False):
    """Scalar reference for the tensor contraction, independent of the package kernels."""
    n_s, k = ps.shape
    n_t = pt.shape[0]
    if over == "samples":
        out = np.zeros((k, k))
        for i2 in range(k):
            for j2 in range(k):
                acc = 0.0
                for i1 in range(n_s):
                    for j1 in range(n_t):
                        same = (i2 == j2) or squared_euclidean
                        d = ps[i1, i2] - pt[j1, j2] if same else ps[i1, i2] + pt[j1, j2]
                        acc += d * d * plan[i1, j1]
                out[i2, j2] = acc
        return out
    out = np.zeros((n_s, n_t))
    for i1 in range(n_s):
        for j1 in range(n_t):
            acc = 0.0
            for i2 in range(k):
                for j2 in range(k):
                    same = (i2 == j2) or squared_euclidean
                    d = ps[i1, i2] - pt[j1, j2] if same else ps[i1, i2] + pt[j1, j2]
                    acc += d * d * plan[i2, j2]
            out[i1, j1] = acc
    return out


class TestLabelAwareCost:
    def test_anchor_values(self):
        # the (0.7, 0.8) pair: 0.01 within class, 2.25 across classes
        assert label_aware_cost(0.7, 0.8, same_class=False) == pytest.approx(2.25, abs=1e-12)
        assert label_aware_cost(0.7, 0.8, same_class=True) == pytest.approx(0.01, abs=1e-12)

    def test_equal_same_class_is_zero(self):
        assert label_aware_cost(0.5, 0.5, same_class=True) == 0.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            label_aware_cost(-0.1, 0.5, same_class=True)
        with pytest.raises(ValueError):
            label_aware_cost(0.5, 1.2, same_class=False)

    def test_cross_class_dominates_same_class(self):
        rng = np.random.default_rng(0)
        a = rng.random(500)
        b = rng.random(500)
        same = label_aware_cost(a, b, same_class=True)
        different = label_aware_cost(a, b, same_class=False)
        assert np.all(different >= same)
        ties = np.isclose(different, same)
        assert np.all((a * b)[ties] < 1e-12)

    def test_same_class_bounded_by_one(self):
        rng = np.random.default_rng(1)
        a, b = rng.random(1000), rng.random(1000)
        assert np.all(label_aware_cost(a, b, same_class=True) <= 1.0)
        for pair in ((0.0, 1.0), (1.0, 0.0), (1.0, 1.0), (0.0, 0.0)):
            assert label_aware_cost(*pair, same_class=True) <= 1.0


class TestLabelSignMatrix:
    def test_structure(self):
        m = label_sign_matrix(3)
        assert np.all(np.diag(m) == 1.0)
        off = m[~np.eye(3, dtype=bool)]
        assert np.all(off == -1.0)

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            label_sign_matrix(0)


class TestContractOracle:
    def test_zero_plan_gives_zero(self):
        rng = np.random.default_rng(2)
        ps = random_predictions(rng, 4, 3)
        pt = random_predictions(rng, 5, 3)
        assert np.all(contract_oracle(ps, pt, np.zeros((4, 5)), "samples") == 0.0)
        assert np.all(contract_oracle(ps, pt, np.zeros((3, 3)), "classes") == 0.0)

    def test_degenerate_single_point(self):
        out = contract_oracle([[1.0]], [[1.0]], [[1.0]], "samples")
        np.testing.assert_allclose(out, [[0.0]])

    def test_matches_scalar_quadruple_loop(self):
        rng = np.random.default_rng(3)
        for over in ("samples", "classes"):
            for _ in range(5):
                n_s, n_t, k = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 4)
                ps = random_predictions(rng, n_s, k)
                pt = random_predictions(rng, n_t, k)
                shape = (n_s, n_t) if over == "samples" else (k, k)
                plan = rng.random(shape)
                expected = quadruple_loop(ps, pt, plan, over)
                np.testing.assert_allclose(
                    contract_oracle(ps, pt, plan, over), expected, atol=1e-12
                )

    def test_fixture_3x2_pinned(self):
        # frozen instance; one entry additionally recomputed longhand below
        ps = np.array([[0.6, 0.4], [0.1, 0.9], [0.5, 0.5]])
        pt = np.array([[0.8, 0.2], [0.3, 0.7]])
        plan = np.array([[0.2, 0.1], [0.0, 0.3], [0.25, 0.15]])
        out = contract_oracle(ps, pt, plan, "samples")
        entry_00 = (
            (0.6 - 0.8) ** 2 * 0.2
            + (0.6 - 0.3) ** 2 * 0.1
            + (0.1 - 0.8) ** 2 * 0.0
            + (0.1 - 0.3) ** 2 * 0.3
            + (0.5 - 0.8) ** 2 * 0.25
            + (0.5 - 0.3) ** 2 * 0.15
        )
        assert out[0, 0] == pytest.approx(entry_00, abs=1e-12)
        expected = quadruple_loop(ps, pt, plan, "samples")
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(4)
        ps = random_predictions(rng, 3, 2)
        pt = random_predictions(rng, 4, 2)
        with pytest.raises(ValueError):
            contract_oracle(ps, pt, np.zeros((3, 3)), "samples")
        with pytest.raises(ValueError):
            contract_oracle(ps, pt, np.zeros((3, 4)), "classes")


class TestContractFast:
    def test_matches_oracle_randomized(self):
        rng = np.random.default_rng(5)
        for _ in range(60):
            n_s = int(rng.integers(1, 31))
            n_t = int(rng.integers(1, 31))
            k = int(rng.integers(1, 9))
            ps = random_predictions(rng, n_s, k)
            pt = random_predictions(rng, n_t, k)
            g1 = rng.random((n_s, n_t))
            g2 = rng.random((k, k))
            for over, plan in (("samples", g1), ("classes", g2)):
                for mode in ("label_aware", "squared_euclidean"):
                    a = contract_oracle(ps, pt, plan, over, mode)
                    b = contract_fast(ps, pt, plan, over, mode)
                    assert np.max(np.abs(a - b)) <= 1e-10

    def test_unbalanced_plans_still_match(self):
        # plans whose marginals are nothing like the uniform histograms
        rng = np.random.default_rng(6)
        ps = random_predictions(rng, 12, 4)
        pt = random_predictions(rng, 9, 4)
        g1 = rng.random((12, 9)) * rng.random(12)[:, None]
        g2 = np.diag(rng.random(4)) * 0.1
        for over, plan in (("samples", g1), ("classes", g2)):
            a = contract_oracle(ps, pt, plan, over)
            b = contract_fast(ps, pt, plan, over)
            assert np.max(np.abs(a - b)) <= 1e-10

    def test_zero_plan(self):
        rng = np.random.default_rng(7)
        ps = random_predictions(rng, 4, 3)
        pt = random_predictions(rng, 5, 3)
        np.testing.assert_allclose(contract_fast(ps, pt, np.zeros((4, 5)), "samples"), 0.0)

    def test_swap_symmetry(self):
        # swapping domains and transposing the plan transposes the output
        rng = np.random.default_rng(8)
        ps = random_predictions(rng, 6, 3)
        pt = random_predictions(rng, 5, 3)
        g1 = rng.random((6, 5))
        a = contract_fast(ps, pt, g1, "samples")
        b = contract_fast(pt, ps, g1.T, "samples")
        np.testing.assert_allclose(a, b.T, atol=1e-12)

    def test_squared_euclidean_drops_sign(self):
        rng = np.random.default_rng(9)
        ps = random_predictions(rng, 4, 2)
        pt = random_predictions(rng, 4, 2)
        g1 = rng.random((4, 4))
        la = contract_fast(ps, pt, g1, "samples", "label_aware")
        ed = contract_fast(ps, pt, g1, "samples", "squared_euclidean")
        np.testing.assert_allclose(np.diag(la), np.diag(ed), atol=1e-12)
        off = ~np.eye(2, dtype=bool)
        assert np.all(la[off] >= ed[off])


class TestSolveBilevel:
    def test_degenerate_single_sample_single_class(self):
        sol = solve_bilevel([[1.0]], [[1.0]], BilevelConfig())
        np.testing.assert_allclose(sol.sample_plan.values, [[1.0]], atol=1e-9)
        assert np.isfinite(sol.objective_trace[-1])

    def test_identical_predictions_concentrate_diagonal(self):
        block = np.vstack([np.tile([0.9, 0.1], (10, 1)), np.tile([0.1, 0.9], (10, 1))])
        cfg = BilevelConfig(lambda1=0.01, lambda2=0.01)
        sol = solve_bilevel(block, block, cfg)
        g2 = sol.class_plan.values
        assert np.trace(g2) >= 0.9 * g2.sum()

    def test_objective_trace_descends(self):
        rng = np.random.default_rng(10)
        ps = random_predictions(rng, 8, 3)
        pt = random_predictions(rng, 7, 3)
        sol = solve_bilevel(ps, pt, BilevelConfig(t_uot=2))
        assert sol.objective_trace[1] <= sol.objective_trace[0] + 1e-6

    def test_trace_finite_plans_nonnegative(self):
        rng = np.random.default_rng(11)
        ps = random_predictions(rng, 9, 4)
        pt = random_predictions(rng, 6, 4)
        sol = solve_bilevel(ps, pt, BilevelConfig())
        assert np.all(np.isfinite(sol.objective_trace))
        assert np.all(np.diff(sol.objective_trace) <= 1e-6)
        assert np.all(sol.sample_plan.values >= 0)
        assert np.all(sol.class_plan.values >= 0)

    def test_frobenius_orders_agree(self):
        rng = np.random.default_rng(12)
        ps = random_predictions(rng, 6, 3)
        pt = random_predictions(rng, 5, 3)
        sol = solve_bilevel(ps, pt, BilevelConfig())
        g1, g2 = sol.sample_plan.values, sol.class_plan.values
        via_samples = float((contract_fast(ps, pt, g1, "samples") * g2).sum())
        via_classes = float((contract_fast(ps, pt, g2, "classes") * g1).sum())
        assert abs(via_samples - via_classes) <= 1e-10

    def test_balanced_mode_matches_marginals(self):
        rng = np.random.default_rng(13)
        ps = random_predictions(rng, 8, 3)
        pt = random_predictions(rng, 8, 3)
        cfg = BilevelConfig(balance_mode="ot", inner_max_iter=5000)
        sol = solve_bilevel(ps, pt, cfg)
        np.testing.assert_allclose(sol.sample_plan.row_marginal, np.full(8, 1 / 8), atol=1e-6)
        np.testing.assert_allclose(sol.class_plan.col_marginal, np.full(3, 1 / 3), atol=1e-6)

    def test_oracle_kernel_mode_agrees_with_fast(self):
        rng = np.random.default_rng(14)
        ps = random_predictions(rng, 7, 3)
        pt = random_predictions(rng, 6, 3)
        fast = solve_bilevel(ps, pt, BilevelConfig(kernel_mode="fast"))
        oracle = solve_bilevel(ps, pt, BilevelConfig(kernel_mode="oracle"))
        np.testing.assert_allclose(
            fast.sample_plan.values, oracle.sample_plan.values, atol=1e-8
        )
        np.testing.assert_allclose(fast.class_plan.values, oracle.class_plan.values, atol=1e-8)
        assert oracle.kernel_calls == fast.kernel_calls > 0

    def test_warm_start_same_solution(self):
        rng = np.random.default_rng(15)
        ps = random_predictions(rng, 8, 3)
        pt = random_predictions(rng, 7, 3)
        cold = solve_bilevel(ps, pt, BilevelConfig())
        warm = solve_bilevel(ps, pt, BilevelConfig(), warm_start=cold)
        np.testing.assert_allclose(
            cold.sample_plan.values, warm.sample_plan.values, atol=1e-7
        )

    def test_class_count_mismatch_rejected(self):
        rng = np.random.default_rng(16)
        with pytest.raises(ValueError):
            solve_bilevel(random_predictions(rng, 4, 2), random_predictions(rng, 4, 3))

    def test_invalid_config_rejected(self):
        rng = np.random.default_rng(17)
        ps = random_predictions(rng, 3, 2)
        with pytest.raises(ValueError):
            solve_bilevel(ps, ps, BilevelConfig(t_uot=0))
        with pytest.raises(ValueError):
            solve_bilevel(ps, ps, BilevelConfig(cost_mode="nope"))


class TestBuotObjective:
    def test_matches_scalar_recomputation(self):
        rng = np.random.default_rng(18)
        ps = random_predictions(rng, 5, 3)
        pt = random_predictions(rng, 4, 3)
        g1 = rng.random((5, 4)) * 0.05
        g2 = rng.random((3, 3)) * 0.1
        cfg = BilevelConfig(lambda1=0.07, lambda2=0.03, beta1=1.5, beta2=0.8)
        mu1, nu1 = np.full(5, 1 / 5), np.full(4, 1 / 4)
        mu2, nu2 = np.full(3, 1 / 3), np.full(3, 1 / 3)

        coupling = 0.0
        for i1 in range(5):
            for j1 in range(4):
                for i2 in range(3):
                    for j2 in range(3):
                        d = ps[i1, i2] - pt[j1, j2] if i2 == j2 else ps[i1, i2] + pt[j1, j2]
                        coupling += d * d * g1[i1, j1] * g2[i2, j2]

        def entropy(p):
            return float(-(p * (np.log(p) - 1.0)).sum())

        def gkl(p, q):
            return float((p * np.log(p / q) - p + q).sum())

        expected = (
            coupling
            - cfg.lambda1 * entropy(g1)
            - cfg.lambda2 * entropy(g2)
            + cfg.beta1 * (gkl(g1.sum(1), mu1) + gkl(g1.sum(0), nu1))
            + cfg.beta2 * (gkl(g2.sum(1), mu2) + gkl(g2.sum(0), nu2))
        )
        value = buot_objective(ps, pt, g1, g2, cfg, mu1, nu1, mu2, nu2)
        assert value == pytest.approx(expected, rel=1e-10)
