import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otanneal import (
    CostMatrix,
    InvalidInputError,
    SolveConfig,
    load_cost_csv,
    load_cost_json,
    log_kernel,
    marginal_residual,
    plan_entropy,
    round_to_assignment,
    sinkhorn_solve,
)
from otanneal.transport import save_cost_csv, save_cost_json

SWAP_COST = np.array([[0.0, 1.0], [1.0, 0.0]])


def closed_form_2x2(eps: float) -> np.ndarray:
    """Entropic plan for cost [[0,1],[1,0]] with uniform marginals.

    By symmetry the plan is [[a,b],[b,a]] with a+b = 1/2 and the entrywise
    optimality ratio a/b = exp(1/eps), so a = 0.5*sigmoid(1/eps). Verified
    against dual ascent in test_closed_form_matches_dual_ascent.
    """
    a = 0.5 / (1.0 + math.exp(-1.0 / eps))
    b = 0.5 - a
    return np.array([[a, b], [b, a]])


def dual_ascent_2x2(eps: float, iters: int = 200_000, lr: float = 0.05) -> np.ndarray:
    """Brute-force dual maximization for the 2x2 swap cost: plain gradient
    ascent on the potentials with explicit marginal-mismatch gradients."""
    f = np.zeros(2)
    g = np.zeros(2)
    r = c = np.array([0.5, 0.5])
    for _ in range(iters):
        P = np.exp((f[:, None] + g[None, :] - SWAP_COST) / eps)
        f += lr * eps * (r - P.sum(axis=1))
        g += lr * eps * (c - P.sum(axis=0))
    return np.exp((f[:, None] + g[None, :] - SWAP_COST) / eps)


def random_instance(n: int, seed: int) -> CostMatrix:
    rng = np.random.default_rng(seed)
    return CostMatrix.uniform(rng.uniform(0.0, 1.0, (n, n)))


class TestCostMatrix:
    def test_validates_finiteness_with_index(self):
        bad = np.zeros((3, 3))
        bad[1, 2] = np.inf
        with pytest.raises(InvalidInputError, match=r"cost\[1,2\]"):
            CostMatrix.uniform(bad)

    def test_rejects_tiny(self):
        with pytest.raises(InvalidInputError):
            CostMatrix.uniform(np.zeros((1, 1)))

    def test_rejects_bad_marginals(self):
        with pytest.raises(InvalidInputError, match="row_marginal"):
            CostMatrix(np.zeros((2, 2)), [0.7, 0.7], [0.5, 0.5])
        with pytest.raises(InvalidInputError, match="strictly positive"):
            CostMatrix(np.zeros((2, 2)), [1.0, 0.0], [0.5, 0.5])


class TestLogKernel:
    def test_swap_cost_unit_eps(self):
        K = log_kernel(CostMatrix.uniform(SWAP_COST), 1.0)
        np.testing.assert_array_equal(K, [[0.0, -1.0], [-1.0, 0.0]])

    def test_zero_cost(self):
        K = log_kernel(CostMatrix.uniform(np.zeros((2, 2))), 0.5)
        np.testing.assert_array_equal(K, np.zeros((2, 2)))

    def test_small_eps(self):
        K = log_kernel(CostMatrix.uniform(SWAP_COST), 0.01)
        np.testing.assert_allclose(K, [[0.0, -100.0], [-100.0, 0.0]])

    def test_epsilon_floor(self):
        with pytest.raises(InvalidInputError, match="floor"):
            log_kernel(CostMatrix.uniform(SWAP_COST), 1e-6)


class TestSinkhornSolve:
    def test_zero_cost_uniform_plan(self):
        sol = sinkhorn_solve(CostMatrix.uniform(np.zeros((2, 2))), 1.0)
        np.testing.assert_allclose(sol.plan, np.full((2, 2), 0.25), atol=1e-12)
        assert sol.marginal_residual <= 1e-12
        assert sol.converged

    @pytest.mark.parametrize("eps", [1.0, 0.5, 0.1, 0.05])
    def test_matches_2x2_closed_form(self, eps):
        sol = sinkhorn_solve(CostMatrix.uniform(SWAP_COST), eps)
        np.testing.assert_allclose(sol.plan, closed_form_2x2(eps), atol=1e-9)

    def test_closed_form_matches_dual_ascent(self):
        # independent oracle for the closed form itself
        np.testing.assert_allclose(dual_ascent_2x2(1.0), closed_form_2x2(1.0), atol=1e-7)

    def test_small_eps_is_hard_permutation(self):
        sol = sinkhorn_solve(CostMatrix.uniform(SWAP_COST), 0.05)
        np.testing.assert_allclose(sol.plan, 0.5 * np.eye(2), atol=1e-8)

    def test_gauge_fixed(self):
        sol = sinkhorn_solve(random_instance(6, 1), 0.3)
        assert abs(sol.log_potentials_f.sum()) < 1e-9

    def test_non_convergence_is_a_result(self):
        cfg = SolveConfig(tolerance=1e-14, max_iterations=2)
        sol = sinkhorn_solve(random_instance(5, 2), 0.2, cfg)
        assert not sol.converged
        assert sol.iterations == 2
        assert np.isfinite(sol.marginal_residual)

    def test_epsilon_below_floor_rejected(self):
        with pytest.raises(InvalidInputError):
            sinkhorn_solve(random_instance(4, 3), 1e-5)

    def test_warm_start_size_mismatch(self):
        sol = sinkhorn_solve(random_instance(4, 4), 0.5)
        with pytest.raises(InvalidInputError, match="warm start"):
            sinkhorn_solve(random_instance(5, 5), 0.5, warm_start=sol)

    @pytest.mark.parametrize("n,eps,seed", [(4, 1.0, 10), (8, 0.1, 11), (16, 0.05, 12)])
    def test_solution_invariants(self, n, eps, seed):
        sol = sinkhorn_solve(random_instance(n, seed), eps)
        assert sol.converged
        assert sol.marginal_residual <= 1e-9
        assert abs(sol.plan.sum() - 1.0) < 1e-9
        assert np.all(sol.plan >= 0.0)
        assert np.all(sol.plan <= 1.0)

    def test_potentials_unique_across_warm_starts(self):
        C = random_instance(8, 20)
        cold = sinkhorn_solve(C, 0.2)
        other = sinkhorn_solve(random_instance(8, 21), 0.2)
        warm = sinkhorn_solve(C, 0.2, warm_start=other)
        np.testing.assert_allclose(cold.log_potentials_f, warm.log_potentials_f, atol=1e-7)
        np.testing.assert_allclose(cold.log_potentials_g, warm.log_potentials_g, atol=1e-7)

    def test_gauge_shift_leaves_plan_unchanged(self):
        C = random_instance(5, 22)
        sol = sinkhorn_solve(C, 0.4)
        shifted = np.exp(
            ((sol.log_potentials_f + 0.7)[:, None]
             + (sol.log_potentials_g - 0.7)[None, :] - C.cost) / sol.epsilon
        )
        np.testing.assert_allclose(shifted, sol.plan, atol=1e-12)

    def test_warm_start_saves_iterations(self):
        # warm-started re-solve at the same temperature should not need more
        # iterations than the cold solve on at least 95% of instances
        wins = 0
        total = 50
        for seed in range(total):
            C = random_instance(16, 300 + seed)
            cold = sinkhorn_solve(C, 0.1)
            warm = sinkhorn_solve(C, 0.1, warm_start=cold)
            wins += warm.iterations <= cold.iterations
        assert wins >= int(0.95 * total)

    def test_annealed_entropy_non_increasing(self):
        rng = np.random.default_rng(7)
        planted = rng.permutation(6)
        cost = np.ones((6, 6))
        cost[np.arange(6), planted] = 0.0
        C = CostMatrix.uniform(cost + rng.uniform(0, 1e-3, (6, 6)))
        eps_grid = np.geomspace(1.0, 0.01, 25)
        warm = None
        entropies = []
        for eps in eps_grid:
            warm = sinkhorn_solve(C, eps, warm_start=warm)
            assert warm.converged
            entropies.append(plan_entropy(warm))
        diffs = np.diff(entropies)
        assert np.all(diffs <= 1e-6)


class TestPlanEntropy:
    def test_uniform(self):
        assert plan_entropy(np.full((2, 2), 0.25)) == pytest.approx(math.log(4), abs=1e-12)

    def test_permutation(self):
        assert plan_entropy(0.5 * np.eye(2)) == pytest.approx(math.log(2), abs=1e-12)

    def test_closed_form_solution(self):
        # direct summation over the closed-form plan at eps=1
        plan = closed_form_2x2(1.0)
        expected = float(-(plan * np.log(plan)).sum())
        assert expected == pytest.approx(1.2753502894, abs=1e-9)
        sol = sinkhorn_solve(CostMatrix.uniform(SWAP_COST), 1.0)
        assert plan_entropy(sol) == pytest.approx(expected, abs=1e-9)

    def test_zero_times_log_zero(self):
        assert plan_entropy(np.array([[0.5, 0.0], [0.0, 0.5]])) == pytest.approx(math.log(2))


class TestMarginalResidual:
    def test_exact_uniform(self):
        C = CostMatrix.uniform(np.zeros((2, 2)))
        assert marginal_residual(np.full((2, 2), 0.25), C) == 0.0

    def test_balanced_non_uniform_plan(self):
        C = CostMatrix.uniform(np.zeros((2, 2)))
        assert marginal_residual(np.array([[0.3, 0.2], [0.2, 0.3]]), C) == 0.0

    def test_unbalanced_plan(self):
        # rows deviate by 0.1 each and so do columns: 0.2 + 0.2 in l1
        C = CostMatrix.uniform(np.zeros((2, 2)))
        res = marginal_residual(np.array([[0.4, 0.2], [0.2, 0.2]]), C)
        assert res == pytest.approx(0.4, abs=1e-15)


class TestRoundToAssignment:
    def test_diagonal(self):
        perm, exact = round_to_assignment(0.5 * np.eye(2))
        assert list(perm) == [0, 1]
        assert exact

    def test_uniform_tie_break(self):
        perm, exact = round_to_assignment(np.full((2, 2), 0.25))
        assert list(perm) == [0, 1]
        assert exact

    def test_matches_brute_force_6x6(self):
        rng = np.random.default_rng(99)
        plan = rng.uniform(0.0, 1.0, (6, 6))
        plan /= plan.sum()
        best = max(
            itertools.permutations(range(6)),
            key=lambda p: sum(plan[i, p[i]] for i in range(6)),
        )
        perm, exact = round_to_assignment(plan)
        assert exact
        assert list(perm) == list(best)

    def test_greedy_path_for_large_plans(self):
        rng = np.random.default_rng(5)
        planted = rng.permutation(12)
        plan = np.full((12, 12), 1e-4)
        plan[np.arange(12), planted] = 1.0 / 12
        perm, exact = round_to_assignment(plan / plan.sum())
        assert not exact
        assert list(perm) == list(planted)
        assert sorted(perm) == list(range(12))


class TestCostSerialization:
    def test_csv_roundtrip(self, tmp_path):
        C = random_instance(5, 42)
        path = tmp_path / "cost.csv"
        save_cost_csv(C, path)
        back = load_cost_csv(path)
        assert back.n == 5
        np.testing.assert_array_equal(back.cost, C.cost)
        np.testing.assert_allclose(back.row_marginal, C.row_marginal)

    def test_csv_header_is_n(self, tmp_path):
        C = random_instance(3, 1)
        path = tmp_path / "cost.csv"
        save_cost_csv(C, path)
        assert path.read_text().splitlines()[0] == "3"

    def test_json_roundtrip(self, tmp_path):
        rng = np.random.default_rng(17)
        r = rng.uniform(0.5, 1.0, 4)
        r /= r.sum()
        C = CostMatrix(rng.uniform(0, 1, (4, 4)), r, np.full(4, 0.25))
        path = tmp_path / "cost.json"
        save_cost_json(C, path)
        back = load_cost_json(path)
        np.testing.assert_array_equal(back.cost, C.cost)
        np.testing.assert_array_equal(back.row_marginal, C.row_marginal)

    def test_json_keys(self, tmp_path):
        import json

        C = random_instance(2, 2)
        path = tmp_path / "cost.json"
        save_cost_json(C, path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"n", "cost", "row_marginal", "col_marginal"}


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(min_value=2, max_value=6),
    seed=st.integers(min_value=0, max_value=10_000),
    eps=st.floats(min_value=0.05, max_value=2.0),
)
def test_solve_properties(n, seed, eps):
    sol = sinkhorn_solve(random_instance(n, seed), eps)
    assert sol.converged
    assert sol.marginal_residual <= 1e-9
    assert abs(sol.plan.sum() - 1.0) < 1e-9
    assert np.all(sol.plan >= 0.0)
    assert abs(sol.log_potentials_f.sum()) < 1e-9
