import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsdelab.core import (ConfigurationError, DiscreteSolution, GeneratorSpec, ObstacleSpec, SDECoeffs,
                           SolutionInvariantError, TimeGrid, assert_solution, check_solution, validate_spec)

from conftest import abs_z, zero_gen


class TestTimeGrid:
    def test_uniform(self):
        g = TimeGrid.uniform_grid(0.0, 1.0, 4)
        assert np.allclose(g.nodes, [0, 0.25, 0.5, 0.75, 1.0])
        assert g.delta == pytest.approx(0.25)
        assert g.index_of(0.5) == 2

    @pytest.mark.parametrize("args", [(1.0, 1.0, 4), (-0.1, 1.0, 4), (0.0, 1.0, 0), (0.5, 0.2, 3)])
    def test_rejects_bad(self, args):
        with pytest.raises(ConfigurationError):
            TimeGrid.uniform_grid(*args)

    def test_nonuniform_needs_increasing(self):
        with pytest.raises(ConfigurationError):
            TimeGrid.from_nodes([0.0, 0.5, 0.5, 1.0])
        g = TimeGrid.from_nodes([0.0, 0.1, 0.5, 1.0])
        assert not g.uniform and g.n_steps == 3

    @given(st.floats(0, 5), st.floats(0.01, 5), st.integers(1, 300))
    def test_nodes_invariants(self, t0, span, n):
        g = TimeGrid.uniform_grid(t0, t0 + span, n)
        assert g.nodes[0] == t0 and g.nodes[-1] == t0 + span
        assert np.all(np.diff(g.nodes) > 0)
        assert len(g.nodes) == n + 1


class TestValidation:
    def test_registry_style_generators_pass(self):
        rep = validate_spec(abs_z(), SDECoeffs.brownian(1), ObstacleSpec.constant(0.0), n_samples=300)
        assert rep.passed
        assert [c.name for c in rep.checks] == ["A1 linear growth", "A2 continuity", "A3 g(t,y,0)=0",
                                                "H1 Lipschitz", "H2 linear growth", "obstacle finite",
                                                "obstacle upper bound"]

    def test_superlinear_generator_flagged(self):
        g = GeneratorSpec(lambda t, y, z: y * y, 1.0)
        rep = validate_spec(g, None, None, n_samples=200)
        assert not rep["A1 linear growth"].passed
        assert rep["A1 linear growth"].worst_excess > 0

    def test_false_a3_flag_flagged(self):
        g = GeneratorSpec(lambda t, y, z: 0.1 * y, 1.0, satisfies_a3=True)
        assert not validate_spec(g, None, None, n_samples=100)["A3 g(t,y,0)=0"].passed

    def test_discontinuous_flagged(self):
        g = GeneratorSpec(lambda t, y, z: np.sign(y), 1.0, lambda t: 1.0)
        rep = validate_spec(g, None, None, n_samples=5000, box=1e-8)
        assert not rep["A2 continuity"].passed

    def test_sde_lipschitz_flagged(self):
        co = SDECoeffs(lambda t, x: x ** 2, lambda t, x: np.ones(np.shape(x) + (1,)), 1.0, 1.0)
        rep = validate_spec(zero_gen(), co, None, n_samples=200)
        assert not rep["H1 Lipschitz"].passed

    def test_upper_bound_violation(self):
        obs = ObstacleSpec.of_state(lambda t, x: x[..., 0], upper_bound=1.0)
        rep = validate_spec(zero_gen(), SDECoeffs.brownian(1), obs, n_samples=200)
        assert not rep["obstacle upper bound"].passed

    def test_report_is_pure_function_of_seed(self):
        a = validate_spec(abs_z(), SDECoeffs.brownian(1), None, n_samples=100, rng_seed=7).to_dict()
        b = validate_spec(abs_z(), SDECoeffs.brownian(1), None, n_samples=100, rng_seed=7).to_dict()
        assert a == b


class TestObstacle:
    def test_kinds(self):
        x = np.zeros((3, 1))
        assert np.all(ObstacleSpec.constant(0.5).at(0.3, x) == 0.5)
        assert np.allclose(ObstacleSpec.of_time(lambda t: 1 - t).at(0.25, x), 0.75)
        ito = ObstacleSpec.ito(1.0, lambda t: 0.5, lambda t: [2.0])
        assert np.allclose(ito.at(0.2, x, w=np.full((3, 1), 0.1)), 1.0 + 0.1 + 0.2)

    def test_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            ObstacleSpec("bogus", lambda t, x: 0)


def _path_solution(Y, dK, L):
    Y, dK, L = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (Y, dK, L))
    grid = TimeGrid.uniform_grid(0, 1, Y.shape[1] - 1)
    return DiscreteSolution(grid, Y, np.zeros((Y.shape[0], Y.shape[1] - 1, 1)), dK, L)


class TestSolutionInvariants:
    def test_valid(self):
        sol = _path_solution([[1.0, 0.5, 0.0]], [[0.0, 0.5, 0.0]], [[0.0, 0.5, 0.0]])
        assert check_solution(sol).passed
        assert np.allclose(sol.K, [[0.0, 0.0, 0.5]])

    def test_below_barrier(self):
        sol = _path_solution([[1.0, 0.4, 0.0]], [[0.0, 0.0, 0.0]], [[0.0, 0.5, 0.0]])
        with pytest.raises(SolutionInvariantError):
            assert_solution(sol)

    def test_negative_push(self):
        sol = _path_solution([[1.0, 0.5, 0.0]], [[0.0, -0.1, 0.0]], [[0.0, 0.0, 0.0]])
        assert check_solution(sol).min_dK < 0

    def test_push_off_barrier_breaks_skorokhod(self):
        sol = _path_solution([[1.0, 0.9, 0.0]], [[0.0, 0.5, 0.0]], [[0.0, 0.5, 0.0]])
        chk = check_solution(sol)
        assert chk.skorokhod_defect > chk.skorokhod_bound and not chk.passed

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 30), st.data())
    def test_level_probabilities_conserve_mass(self, n, data):
        grid = TimeGrid.uniform_grid(0, 1, n)
        Y = [np.zeros(i + 1) for i in range(n + 1)]
        stop = [None] * (n + 1)
        for i in range(1, n):
            if data.draw(st.booleans()):
                stop[i] = np.array(data.draw(st.lists(st.booleans(), min_size=i + 1, max_size=i + 1)))
        stop[n] = np.ones(n + 1, dtype=bool)
        sol = DiscreteSolution(grid, Y, [np.zeros((i + 1, 1)) for i in range(n)], Y, Y, layout="tree",
                               stop_idx=stop)
        probs = sol.level_probabilities()
        absorbed = sum(float(np.sum(np.where(s, p, 0.0))) for p, s in zip(probs, stop) if s is not None)
        assert absorbed == pytest.approx(1.0, abs=1e-12)
        if all(s is None for s in stop[:-1]):
            assert all(np.sum(p) == pytest.approx(1.0) for p in probs)
