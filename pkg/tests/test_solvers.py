import math
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsdelab.core import (ConfigurationError, GeneratorSpec, ObstacleSpec, PreconditionError, SDECoeffs,
                           StabilityError, TimeGrid, check_solution)
from rbsdelab.pathsim import simulate_paths
from rbsdelab.solvers import (RBSDEProblem, TreeModel, comparison_check, enumerate_snell, pointwise_ordered,
                              polynomial_basis, solve_lsmc, solve_penalized, solve_tree)

from conftest import PUT, abs_z, brownian_tree, const_terminal, linear, put_problem, zero_gen
from oracles import black_scholes_put, brute_snell, crr_american_put, explicit_linear_bsde, linear_bsde

LOW = ObstacleSpec.constant(-1e9)


def _random_instance(rng, depth):
    a, b, c = rng.normal(size=3)
    k = rng.uniform(-1, 1)
    obs = ObstacleSpec.of_state(lambda t, x: a * np.sin(3 * x[..., 0]) + b * t + k)
    xi = lambda x: np.maximum(c * x[..., 0] ** 2 - 0.5, obs.at(1.0, x))  # noqa: E731
    grid = TimeGrid.uniform_grid(0, 1, depth)
    return RBSDEProblem(zero_gen(), xi, obs, grid), TreeModel(grid, 0.0, rng.uniform(-0.5, 0.5), 1.0)


class TestTree:
    def test_snell_matches_enumeration(self):
        rng = np.random.default_rng(1)
        for depth in (1, 4, 7):
            prob, tree = _random_instance(rng, depth)
            assert solve_tree(prob, tree).y0 == pytest.approx(enumerate_snell(prob, tree), abs=1e-12)

    def test_enumeration_against_coin_path_recursion(self):
        prob, tree = _random_instance(np.random.default_rng(5), 6)
        h = math.sqrt(tree.grid.delta)

        def payoff(prefix):
            i = len(prefix)
            x = np.array([[tree.x0 + tree.b * tree.grid.nodes[i] + (2 * sum(prefix) - i) * h]])
            f = prob.terminal_values if i == tree.n_steps else (lambda x: prob.obs.at(tree.grid.nodes[i], x))
            return float(f(x)[0])

        assert enumerate_snell(prob, tree) == pytest.approx(brute_snell(payoff, 6), abs=1e-12)

    def test_enumeration_guards(self):
        prob, tree = _random_instance(np.random.default_rng(0), 13)
        with pytest.raises(ConfigurationError):
            enumerate_snell(prob, tree)
        prob, tree = _random_instance(np.random.default_rng(0), 3)
        with pytest.raises(PreconditionError):
            enumerate_snell(RBSDEProblem(abs_z(), prob.terminal, prob.obs, prob.grid), tree)

    def test_flat_barrier_closed_form(self, flat_problem):
        sol = solve_tree(flat_problem, brownian_tree(n=200))
        for i, Y, L, dK in sol.iter_levels():
            assert np.allclose(Y, 1.0 - sol.grid.nodes[i], atol=1e-12)
        assert sol.K[-1] == pytest.approx(1.0, abs=1e-10)
        assert sol.K_total == pytest.approx(1.0, abs=1e-10)

    def test_linear_bsde_discrete_and_continuous(self):
        exact = linear_bsde(0.5, 0.2, 1.0, 1.0)
        errs = []
        for n in (200, 400, 800):
            grid = TimeGrid.uniform_grid(0, 1, n)
            prob = RBSDEProblem(linear(0.5, 0.0, 0.2), const_terminal(1.0), LOW, grid)
            tree = TreeModel(grid, 0.0, 0.0, 1.0)
            y = solve_tree(prob, tree, picard=0).y0
            assert y == pytest.approx(explicit_linear_bsde(0.5, 0.2, 1.0, 1.0, n), abs=1e-12)
            errs.append(abs(solve_tree(prob, tree, picard=1).y0 - exact))
        # first order in the step
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.05)
        assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.05)

    def test_low_barrier_is_irrelevant(self):
        grid = TimeGrid.uniform_grid(0, 1, 60)
        prob = RBSDEProblem(linear(), lambda x: np.sin(x[..., 0]), LOW, grid)
        tree = TreeModel(grid, 0.0, 0.1, 1.0)
        a, b = solve_tree(prob, tree), solve_tree(prob, tree, reflect=False)
        assert all(np.array_equal(y1, y2) for y1, y2 in zip(a.Y, b.Y))
        assert a.K_total == 0.0

    def test_european_put_black_scholes(self):
        prob, tree = put_problem(1000)
        eu = RBSDEProblem(prob.gen, prob.terminal, LOW, prob.grid)
        y = solve_tree(eu, tree, reflect=False).y0
        p = PUT
        assert y == pytest.approx(black_scholes_put(p["S0"], p["K"], p["r"], p["vol"], p["T"]), rel=2e-3)

    def test_american_put_crr(self):
        prob, tree = put_problem(500)
        p = PUT
        ref = crr_american_put(p["S0"], p["K"], p["r"], p["vol"], p["T"], 2000)
        sol = solve_tree(prob, tree)
        assert sol.y0 == pytest.approx(ref, rel=2e-3)
        assert sol.K_total > 0

    def test_tree_needs_constant_coefficients(self):
        co = SDECoeffs(lambda t, x: -x, lambda t, x: np.ones(np.shape(x) + (1,)), 1.0, 1.0)
        with pytest.raises(ConfigurationError):
            TreeModel.from_coeffs(co, [0.0], TimeGrid.uniform_grid(0, 1, 4))

    def test_terminal_below_barrier(self):
        grid = TimeGrid.uniform_grid(0, 1, 4)
        prob = RBSDEProblem(zero_gen(), const_terminal(0.0), ObstacleSpec.constant(0.5), grid)
        with pytest.raises(PreconditionError):
            solve_tree(prob, brownian_tree(n=4))

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 3), st.sampled_from(["zero", "abs-z", "linear"]))
    def test_invariants_hold(self, a, k, w, gname):
        gen = {"zero": zero_gen(), "abs-z": abs_z(), "linear": linear()}[gname]
        grid = TimeGrid.uniform_grid(0, 1, 40)
        obs = ObstacleSpec.of_state(lambda t, x: a * np.cos(w * x[..., 0]) + k * t)
        prob = RBSDEProblem(gen, lambda x: obs.at(1.0, x) + x[..., 0] ** 2, obs, grid)
        sol = solve_tree(prob, TreeModel(grid, 0.0, 0.0, 1.0))
        chk = check_solution(sol)
        assert chk.passed and chk.min_gap >= 0 and chk.min_dK >= 0


class TestLSMC:
    def test_flat_barrier(self, flat_problem):
        b = simulate_paths(SDECoeffs.brownian(1), (0.0, [0.0]), flat_problem.grid, 20_000, seed=0)
        sol = solve_lsmc(flat_problem, b)
        assert sol.y0 == pytest.approx(1.0, abs=1e-6)
        assert np.allclose(sol.K_total, 1.0, atol=1e-6)

    def test_brownian_square(self):
        grid = TimeGrid.uniform_grid(0, 1, 20)
        prob = RBSDEProblem(zero_gen(), lambda x: x[..., 0] ** 2, LOW, grid)
        b = simulate_paths(SDECoeffs.brownian(1), (0.0, [0.0]), grid, 50_000, seed=3)
        sol = solve_lsmc(prob, b, degree=2, reflect=False)
        se = np.std(b.X[:, -1, 0] ** 2) / math.sqrt(50_000)
        assert abs(sol.y0 - 1.0) < 3 * se
        # Z = 2 B_t is spanned by the basis
        assert np.mean(np.abs(sol.Z[:, 10, 0] - 2 * b.X[:, 10, 0])) < 0.02

    def test_american_put_realized_near_tree(self):
        prob, tree = put_problem(50)
        b = simulate_paths(prob.coeffs, (0.0, prob.x0), prob.grid, 30_000, seed=2)
        assert solve_lsmc(prob, b, scheme="realized").y0 == pytest.approx(solve_tree(prob, tree).y0, rel=0.02)

    def test_one_step_bias_grows_with_exercise_dates(self):
        # regress-then-max is biased upward at every exercise date; fine on a coarse grid only
        errs = []
        for n in (5, 50):
            prob, tree = put_problem(n)
            b = simulate_paths(prob.coeffs, (0.0, prob.x0), prob.grid, 30_000, seed=2)
            errs.append(solve_lsmc(prob, b).y0 / solve_tree(prob, tree).y0 - 1)
        assert abs(errs[0]) < 0.01
        assert errs[1] > 0.05

    def test_control_variate_off(self, flat_problem):
        b = simulate_paths(SDECoeffs.brownian(1), (0.0, [0.0]), flat_problem.grid, 2000, seed=0)
        assert solve_lsmc(flat_problem, b, control=False).y0 == pytest.approx(1.0, abs=1e-6)

    def test_needs_paths(self, flat_problem):
        b = simulate_paths(SDECoeffs.brownian(1), (0.0, [0.0]), flat_problem.grid, 20, seed=0)
        with pytest.raises(ConfigurationError):
            solve_lsmc(flat_problem, b)

    def test_basis_size(self):
        x = np.random.default_rng(0).normal(size=(100, 3))
        assert polynomial_basis(x, 3).shape == (100, comb(3 + 3, 3))


class TestPenalization:
    def test_monotone_and_converges(self, flat_problem):
        tree = brownian_tree(n=200)
        ref = solve_tree(flat_problem, tree).y0
        ys = [solve_penalized(flat_problem, tree, n).y0 for n in (4, 16, 64)]
        assert ys[0] <= ys[1] <= ys[2] <= ref + 1e-12
        assert abs(ys[-1] - ref) / ref < 0.02

    def test_stability_guard(self, flat_problem):
        with pytest.raises(StabilityError):
            solve_penalized(flat_problem, brownian_tree(n=200), 200.0)

    def test_lsmc_backend(self, flat_problem):
        b = simulate_paths(SDECoeffs.brownian(1), (0.0, [0.0]), flat_problem.grid, 5000, seed=0)
        ys = [solve_penalized(flat_problem, b, n).y0 for n in (4, 16)]
        assert ys[0] <= ys[1] < 1.0


class TestComparison:
    def test_shifted_generator_dominates(self):
        grid = TimeGrid.uniform_grid(0, 1, 80)
        obs = ObstacleSpec.constant(0.0)
        tree = TreeModel(grid, 0.0, 0.0, 1.0)
        lo = solve_tree(RBSDEProblem(abs_z(), lambda x: np.abs(x[..., 0]), obs, grid), tree)
        hi = solve_tree(RBSDEProblem(abs_z().shifted(0.1), lambda x: np.abs(x[..., 0]) + 0.05, obs, grid), tree)
        res = comparison_check(hi, lo)
        assert res.holds and res.root_gap > 0
        assert not comparison_check(lo, hi).holds

    def test_layout_mismatch(self, flat_problem):
        t = solve_tree(flat_problem, brownian_tree(n=200))
        b = simulate_paths(SDECoeffs.brownian(1), (0.0, [0.0]), flat_problem.grid, 100, seed=0)
        with pytest.raises(ConfigurationError):
            comparison_check(t, solve_lsmc(flat_problem, b, degree=1))

    def test_pointwise(self):
        g = GeneratorSpec(lambda t, y, z: y, 1.0)
        h = GeneratorSpec(lambda t, y, z: -y, 1.0)
        assert not pointwise_ordered(g, h)
        assert pointwise_ordered(g, h, y_min=0.0)
