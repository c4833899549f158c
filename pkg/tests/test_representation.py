import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbsdelab.core import (ConfigurationError, GeneratorSpec, ObstacleSpec, PreconditionError, SDECoeffs,
                           SolutionInvariantError, TimeGrid)
from rbsdelab.pathsim import coarsen, hitting_time_index, simulate_brownian, simulate_paths
from rbsdelab.representation import (RepresentationInstance, convergence_verdict, corollary32_check,
                                     corollary33_check, corollary34_config, crn_increments, difference_quotient,
                                     loglog_slope, representation_sweep, representation_target,
                                     richardson_limit, short_horizon_terminal)

from conftest import abs_z, linear, zero_gen

LOW = ObstacleSpec.constant(-10.0)
B1 = SDECoeffs.brownian(1)


def sqrt_cap():
    return GeneratorSpec(lambda t, y, z: np.sqrt(np.minimum(np.abs(y), 1.0)), 1.0, lambda t: 1.0, name="sqrt-cap")


class TestTarget:
    def test_beta_z_with_drift(self):
        g = linear(0.0, 0.5, 0.0)
        co = SDECoeffs.constant_coeffs([0.3], [[1.0]])
        assert representation_target(g, co, 0.0, [0.0], 1.0, [2.0]) == pytest.approx(1.6)

    def test_preset(self):
        inst = corollary34_config(linear(0.0, 0.5, 0.0), [2.0], 1.0, LOW)
        assert inst.target == pytest.approx(1.0)
        assert corollary34_config(abs_z(), [0.0], 1.0, LOW).target == 0.0
        assert corollary34_config(sqrt_cap(), [1.0], 0.25, LOW).target == pytest.approx(0.5)

    def test_sigma_transpose(self):
        g = GeneratorSpec(lambda t, y, z: z[..., 0] + 10 * z[..., 1], 10.0, d=2)
        co = SDECoeffs.constant_coeffs([0.0, 0.0], [[1.0, 2.0], [0.0, 3.0]])
        # sigma^T q = (1, 2 + 3) for q = (1, 1)
        assert representation_target(g, co, 0.0, [0, 0], 0.0, [1.0, 1.0]) == pytest.approx(1 + 50)


class TestInstance:
    def test_eta_must_exceed_barrier(self):
        with pytest.raises(PreconditionError):
            RepresentationInstance(zero_gen(), B1, ObstacleSpec.constant(1.0), 0.0, (0.0,), 1.0, (1.0,))

    @pytest.mark.parametrize("eps", [(0.1, 0.2), (0.2, 0.07), (2.0, 1.0), (0.2, 0.2)])
    def test_schedule_validation(self, eps):
        with pytest.raises(ConfigurationError):
            RepresentationInstance(zero_gen(), B1, LOW, 0.0, (0.0,), 1.0, (1.0,), epsilons=eps)

    def test_p_norm_range(self):
        with pytest.raises(ConfigurationError):
            RepresentationInstance(zero_gen(), B1, LOW, 0.0, (0.0,), 1.0, (1.0,), p_norm=2.0)

    def test_defaults(self):
        inst = RepresentationInstance(zero_gen(), B1, LOW, 0.5, (0.0,), 1.0, (1.0,))
        assert inst.epsilons == pytest.approx((0.1, 0.05, 0.025, 0.0125, 0.00625))
        assert inst.multiples == [16, 8, 4, 2, 1]
        assert inst.seeds == list(range(8))
        assert inst.tolerance == pytest.approx(0.02)


class TestTerminal:
    def _bundle(self, co=B1, n=20, P=4000, seed=0):
        return simulate_paths(co, (0.0, [0.0]), TimeGrid.uniform_grid(0, 0.2, n), P, seed)

    def test_zero_direction(self):
        b = self._bundle()
        tau = hitting_time_index(b, 1.0, [0.0], LOW)
        xi, stop = short_horizon_terminal(b, 1.0, [0.0], tau, 20)
        assert np.all(xi == 1.0) and np.all(stop == 20)

    def test_deterministic_flow(self):
        b = self._bundle(SDECoeffs.constant_coeffs([1.0], [[0.0]]), P=3)
        tau = hitting_time_index(b, 0.5, [1.0], LOW)
        xi, _ = short_horizon_terminal(b, 0.5, [1.0], tau, 20)
        assert np.allclose(xi, 0.7)

    def test_domination_on_truncating_barrier(self):
        b = self._bundle(P=100_000, seed=4)
        obs = ObstacleSpec.constant(0.95)
        tau = hitting_time_index(b, 1.0, [1.0], obs)
        assert 0.3 < np.mean(tau < 20) < 1
        xi, stop = short_horizon_terminal(b, 1.0, [1.0], tau, 20, obs=obs)
        free = stop < tau
        assert np.all(xi[free] > 0.95)

    def test_domination_violation_detected(self):
        b = self._bundle(P=200)
        L = np.full((200, 21), 0.5)
        with pytest.raises(SolutionInvariantError):
            # a stop that ignores the barrier hits
            short_horizon_terminal(b, 0.6, [1.0], np.full(200, 20), 20, L_values=L)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 5), st.integers(1, 4))
def test_crn_matches_fine_grid(seed, n_sub, top):
    mult = [2 ** k for k in range(top, -1, -1)]
    eps_min = 0.01
    incs = crn_increments(seed, 50, 2, eps_min, n_sub, mult)
    fine = simulate_brownian(TimeGrid.uniform_grid(0, eps_min * max(mult), n_sub * max(mult)), 50, 2, seed)
    for m, inc in zip(mult, incs):
        assert np.allclose(inc, coarsen(fine[:, : n_sub * m], m), rtol=0, atol=1e-14)


class TestVerdict:
    def test_converged(self):
        assert convergence_verdict([0.1, 0.05, 0.02, 0.01, 0.005], [0.001] * 5, 0.02) == "converged"

    def test_inconclusive(self):
        assert convergence_verdict([0.1, 0.05, 0.02, 0.01, 0.005], [0.01] * 5, 0.02) == "inconclusive"

    def test_failed_far(self):
        assert convergence_verdict([0.3, 0.3, 0.3, 0.3, 0.3], [0.001] * 5, 0.02) == "failed"

    def test_failed_growing_tail(self):
        assert convergence_verdict([0.0, 0.0, 0.001, 0.01, 0.019], [0.0] * 5, 0.02) == "failed"

    def test_nan(self):
        assert convergence_verdict([0.1, np.nan], [0.0, 0.0], 0.02) == "failed"

    def test_richardson_and_slope(self):
        eps = [0.2, 0.1, 0.05]
        est = [1.0 + 2 * e for e in eps]
        assert richardson_limit(eps, est) == pytest.approx(1.0)
        assert loglog_slope(eps, [2 * e for e in eps]) == pytest.approx(1.0)
        assert loglog_slope(eps, [0.0, 0.0, 0.1]) is None


def _tree(gen, eta=1.0, q=1.0, obs=LOW, co=B1, **kw):
    return RepresentationInstance(gen, co, obs, kw.pop("t", 0.0), (0.0,), eta, (q,), backend="tree", **kw)


class TestSweepTree:
    @pytest.mark.parametrize("gen,eta,target", [(zero_gen(), 1.0, 0.0), (linear(), 1.0, 1.2),
                                                (abs_z(), 1.0, 1.0), (sqrt_cap(), 0.25, 0.5)])
    def test_preset_generators_converge(self, gen, eta, target):
        rep = representation_sweep(_tree(gen, eta))
        assert rep.target == pytest.approx(target)
        assert rep.verdict == "converged"
        assert rep.final.abs_error <= rep.abs_tol

    def test_drift_and_volatility(self):
        co = SDECoeffs.constant_coeffs([0.3], [[0.5]])
        rep = representation_sweep(_tree(linear(), co=co, q=2.0))
        assert rep.target == pytest.approx(0.5 + 0.5 * 1.0 + 0.2 + 0.6)
        assert rep.verdict == "converged"

    def test_smooth_slope_near_one(self):
        rep = representation_sweep(_tree(linear()))
        assert 0.7 < rep.slope < 1.3

    @pytest.mark.parametrize("t", [0.0, 0.25, 0.5])
    def test_t_robustness(self, t):
        assert representation_sweep(_tree(abs_z(), t=t)).verdict == "converged"

    def test_smaller_stopping_time(self):
        # a cap at half of every horizon grid halves the effective horizon
        rep = representation_sweep(_tree(linear(), stop_cap=10))
        est = [r.estimate for r in rep.rows]
        assert abs(est[-1] - 0.5 * rep.target) < 0.01
        assert abs(est[-1] - 0.6) < abs(est[0] - 0.6)

    def test_p_norm_agreement(self):
        # the tree is noiseless, so use the Monte Carlo backend at a small size
        kw = dict(n_paths=4000, n_seeds=4, backend="lsmc")
        a = representation_sweep(RepresentationInstance(abs_z(), B1, LOW, 0.0, (0.0,), 1.0, (1.0,), **kw))
        b = representation_sweep(RepresentationInstance(abs_z(), B1, LOW, 0.0, (0.0,), 1.0, (1.0,), p_norm=1.5,
                                                        **kw))
        assert a.verdict == b.verdict
        assert b.final.abs_error >= a.final.abs_error - 1e-15

    def test_binding_barrier_k_correction(self):
        eps = tuple(0.2 * 2.0 ** -k for k in range(5))
        rep = representation_sweep(_tree(zero_gen(), obs=ObstacleSpec.constant(0.95), epsilons=eps))
        assert rep.final.tau_truncated_fraction > 0.3
        assert rep.verdict == "converged"
        assert rep.verdict_no_k == "failed"


class TestMonteCarloEquivalences:
    kw = dict(n_paths=3000, n_seeds=2, epsilons=(0.2, 0.1, 0.05))

    def test_preset_equals_general_path(self):
        g = linear(0.0, 0.5, 0.0)
        a = representation_sweep(corollary34_config(g, [2.0], 1.0, LOW, **self.kw))
        b = representation_sweep(RepresentationInstance(g, SDECoeffs.constant_coeffs([0.0], [[1.0]]), LOW, 0.0,
                                                        (0.0,), 1.0, (2.0,), **self.kw))
        assert a.csv_text() == b.csv_text()

    def test_single_quotient_matches_replicate(self):
        inst = corollary34_config(abs_z(), [1.0], 1.0, ObstacleSpec.constant(0.8), **self.kw)
        rep = representation_sweep(inst)
        q = difference_quotient(inst, 0.1, seed=1)
        assert q.estimate == rep.rows[1].per_seed[1]

    def test_sweep_reproducible(self):
        inst = corollary34_config(abs_z(), [1.0], 1.0, LOW, **self.kw)
        assert representation_sweep(inst).to_json() == representation_sweep(inst).to_json()

    def test_zero_target_within_noise(self):
        inst = RepresentationInstance(zero_gen(), B1, LOW, 0.0, (0.0,), 1.0, (1.0,), **self.kw)
        for row in representation_sweep(inst).rows:
            assert abs(row.estimate) <= 3 * row.stderr + 1e-12


class TestCorollaries:
    def test_ito_drift(self):
        obs = ObstacleSpec.ito(0.0, lambda t: 0.1, lambda t: [0.0])
        rep = corollary32_check(_tree(zero_gen(), eta=0.5, obs=obs))
        assert rep.passed and rep.checks["k_vanishes"]

    def test_ito_volatility(self):
        obs = ObstacleSpec.ito(0.0, lambda t: 0.0, lambda t: [0.2])
        rep = corollary32_check(_tree(abs_z(), eta=0.5, obs=obs))
        assert rep.checks["min_condition"] == pytest.approx(0.2)
        assert rep.passed

    def test_ito_violation(self):
        obs = ObstacleSpec.ito(0.0, lambda t: -0.1, lambda t: [0.0])
        with pytest.raises(PreconditionError):
            corollary32_check(_tree(zero_gen(), eta=0.5, obs=obs))

    def test_bounded_barrier(self):
        rep = corollary33_check(_tree(abs_z(), obs=ObstacleSpec.constant(0.0)))
        assert rep.passed and rep.checks["min_y"] >= 0.0
        assert rep.sweep.target == pytest.approx(1.0)

    def test_bounded_constant_solution(self):
        rep = corollary33_check(_tree(zero_gen(), eta=0.5, q=0.0, obs=ObstacleSpec.constant(0.0)))
        assert all(r.estimate_no_k == 0.0 for r in rep.sweep.rows)

    def test_bounded_guard_keeps_y_above_c(self):
        rep = corollary33_check(_tree(abs_z(), eta=0.01, q=5.0, obs=ObstacleSpec.constant(0.0)))
        assert rep.checks["y_above_C"]
        assert rep.sweep.final.tau_truncated_fraction > 0.5

    def test_bounded_needs_a3(self):
        with pytest.raises(PreconditionError):
            corollary33_check(_tree(linear(), obs=ObstacleSpec.constant(0.0)))
