import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptopt.errors import InvalidArgumentError, NearStationarity
from adaptopt.estimators import (
    AccuracySpec,
    VarianceEstimate,
    adaptive_gradient_sample,
    chebyshev_sample_size,
    estimate_variance,
    exact_variances,
    function_pair_batch,
    function_pair_estimates,
    gradient_norm_condition_holds,
    required_gradient_batch,
    taylor_accuracy_holds,
)
from adaptopt.problems import NoisyOracle, quadratic_problem

# f(x) = x^2 / 2, gradient 1 at x = 1
HALF_SQUARE = quadratic_problem([1.0], [0.0])
PLANE = quadratic_problem([1.0, 2.0], [0.0, 0.0])


class TestChebyshev:
    @pytest.mark.parametrize("args,expected", [
        ((1, 1, 0.1, 0.1), 1000), ((0, 1, 0.1, 0.1), 1), ((1, 1, 100, 0.5), 1)])
    def test_examples(self, args, expected):
        assert chebyshev_sample_size(*args) == expected

    @pytest.mark.parametrize("args", [(1, 0, 1, 0.1), (1, 1, 0, 0.1), (-1, 1, 1, 0.1),
                                      (1, 1, 1, 0.0), (1, 1, 1, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(InvalidArgumentError):
            chebyshev_sample_size(*args)

    @given(st.floats(1e-3, 1e3), st.floats(1e-2, 10), st.floats(1e-2, 10), st.floats(0.01, 0.99))
    def test_definition(self, V, kappa, Delta, delta):
        n = chebyshev_sample_size(V, kappa, Delta, delta)
        # n is the smallest count meeting the Chebyshev bound (up to rounding)
        assert V / (n * (kappa * Delta) ** 2) <= delta * (1 + 1e-9)
        if n > 1:
            assert V / ((n - 1) * (kappa * Delta) ** 2) > delta * (1 - 1e-9)

    @given(st.floats(1e-3, 1e3), st.floats(1e-2, 10), st.floats(1e-2, 10), st.floats(0.01, 0.5),
           st.floats(1.0, 4.0))
    def test_monotone(self, V, kappa, Delta, delta, scale):
        n = chebyshev_sample_size(V, kappa, Delta, delta)
        assert chebyshev_sample_size(V, kappa, Delta * scale, delta) <= n
        assert chebyshev_sample_size(V, kappa, Delta, min(delta * scale, 0.99)) <= n
        assert chebyshev_sample_size(V * scale, kappa, Delta, delta) >= n

    def test_soundness_monte_carlo(self):
        kappa, Delta, delta = 1.0, 0.3, 0.1
        o = NoisyOracle(PLANE, sigma_g=1.0, seed=3)
        V = exact_variances(o)
        n = chebyshev_sample_size(V.V_g, kappa, Delta, delta)
        x = np.array([1.0, -1.0])
        g_true = PLANE.gradient(x)
        misses = sum(np.linalg.norm(o.estimate(x, n)[1] - g_true) > kappa * Delta
                     for _ in range(10_000))
        assert misses / 10_000 <= delta + 0.02


class TestEstimateVariance:
    def test_zero_noise(self):
        v = estimate_variance(NoisyOracle(PLANE), np.ones(2), 10)
        assert v.V_f == 0 and v.V_g == 0

    def test_gaussian(self):
        o = NoisyOracle(HALF_SQUARE, sigma_g=1.0, seed=0)
        v = estimate_variance(o, np.ones(1), 100_000)
        assert 0.98 <= v.V_g <= 1.02

    def test_gradient_variance_is_trace(self):
        o = NoisyOracle(PLANE, sigma_f=0.5, sigma_g=1.0, seed=1)
        v = estimate_variance(o, np.ones(2), 50_000)
        assert v.V_g == pytest.approx(2.0, rel=0.03)
        assert v.V_f == pytest.approx(0.25, rel=0.03)

    def test_pilot_two(self):
        v = estimate_variance(NoisyOracle(PLANE, 1.0, 1.0, seed=0), np.ones(2), 2)
        assert v.pilot == 2 and v.V_g >= 0

    def test_pilot_too_small(self):
        with pytest.raises(InvalidArgumentError):
            estimate_variance(NoisyOracle(PLANE), np.ones(2), 1)

    def test_variance_estimate_invariants(self):
        with pytest.raises(InvalidArgumentError):
            VarianceEstimate(-1.0, 0.0, 10)
        with pytest.raises(InvalidArgumentError):
            VarianceEstimate(0.0, 0.0, 1)


class TestAccuracyConditions:
    def test_exact(self):
        truth = (1.0, np.ones(2), np.eye(2))
        for Delta in (1e-6, 1.0, 10.0):
            assert taylor_accuracy_holds(truth, truth, Delta, AccuracySpec())

    def test_function_clause(self):
        spec = AccuracySpec(kappa_f=1.0)
        Delta = 0.5
        truth = (1.0, np.ones(2))
        est = (1.0 + 2 * Delta ** 2, np.ones(2))
        assert not taylor_accuracy_holds(est, truth, Delta, spec)

    def test_second_order_radii(self):
        spec = AccuracySpec(2.0, 3.0, 4.0, order="second")
        assert spec.radii(0.5) == (2.0 * 0.125, 3.0 * 0.25, 4.0 * 0.5)

    def test_hessian_clause(self):
        spec = AccuracySpec(kappa_h=0.1)
        truth = (0.0, np.zeros(2), np.eye(2))
        est = (0.0, np.zeros(2), 1.2 * np.eye(2))
        assert not taylor_accuracy_holds(est, truth, 1.0, spec)

    def test_gradient_clause_frequency(self):
        spec = AccuracySpec(kappa_g=1.0, delta=0.1)
        Delta = 0.2
        o = NoisyOracle(PLANE, sigma_g=1.0, seed=4)
        n = chebyshev_sample_size(o.V_g, spec.kappa_g, Delta, spec.delta)
        x = np.array([0.3, 0.7])
        truth = (PLANE.f(x), PLANE.gradient(x))
        hits = 0
        for _ in range(10_000):
            _, g, _ = o.estimate(x, n)
            hits += taylor_accuracy_holds((truth[0], g), truth, Delta, spec)
        assert hits / 10_000 >= 1 - spec.delta

    @pytest.mark.parametrize("kw", [{"delta": 0.5}, {"kappa_f": -1.0}, {"order": "third"}])
    def test_spec_rejects(self, kw):
        with pytest.raises(InvalidArgumentError):
            AccuracySpec(**kw)

    def test_gradient_norm_condition(self):
        assert gradient_norm_condition_holds([1.0, 2.0], [1.0, 2.0], 0.0)
        assert not gradient_norm_condition_holds([1e-9, 0.0], [0.0, 0.0], 0.5)
        assert gradient_norm_condition_holds([1.05, 0.0], [1.0, 0.0], 0.1)
        with pytest.raises(InvalidArgumentError):
            gradient_norm_condition_holds([1.0], [1.0], 1.0)


class TestAdaptiveGradient:
    def test_zero_noise(self):
        o = NoisyOracle(PLANE)
        V = exact_variances(o)
        x = np.array([1.0, 1.0])
        g, n, used = adaptive_gradient_sample(o, x, 1.0, AccuracySpec(), V, n0=4)
        assert n == 4 and used == 4
        np.testing.assert_array_equal(g, PLANE.gradient(x))

    def test_plug_in_example(self):
        spec = AccuracySpec(kappa_g=0.5, delta=0.1)
        finals = []
        for seed in range(200):
            o = NoisyOracle(HALF_SQUARE, sigma_g=1.0, seed=seed)
            _, n, _ = adaptive_gradient_sample(o, np.ones(1), 1.0, spec, exact_variances(o), n0=1)
            finals.append(n)
        # plug-in target 1/(0.1 * 0.25) = 40; the doubling grid lands within a
        # factor 2 unless the small-batch norm estimate is far off
        assert np.mean([20 <= n <= 80 for n in finals]) >= 0.85
        assert max(set(finals), key=finals.count) == 64

    def test_stationary_point_hits_cap(self):
        o = NoisyOracle(HALF_SQUARE, sigma_g=1.0, seed=0)
        with pytest.raises(NearStationarity):
            adaptive_gradient_sample(o, np.zeros(1), 1.0, AccuracySpec(), exact_variances(o),
                                     cap=2 ** 10)

    def test_nonpositive_alpha(self):
        o = NoisyOracle(HALF_SQUARE)
        with pytest.raises(InvalidArgumentError):
            adaptive_gradient_sample(o, np.ones(1), 0.0, AccuracySpec(), exact_variances(o))

    @given(st.integers(0, 10_000), st.floats(0.05, 2.0), st.floats(0.2, 2.0))
    def test_fixed_point_holds(self, seed, alpha, sigma):
        spec = AccuracySpec(kappa_g=0.5)
        o = NoisyOracle(PLANE, sigma_g=sigma, seed=seed)
        V = exact_variances(o)
        g, n, used = adaptive_gradient_sample(o, np.array([1.0, -2.0]), alpha, spec, V)
        assert n >= required_gradient_batch(V.V_g, spec.kappa_g, alpha, np.linalg.norm(g), spec.delta)
        assert n >= chebyshev_sample_size(V.V_g, spec.kappa_g, alpha * np.linalg.norm(g), spec.delta)
        assert used >= n


class TestFunctionPair:
    def test_zero_noise(self):
        o = NoisyOracle(PLANE)
        x, xs = np.array([1.0, 1.0]), np.array([0.5, 0.0])
        f0, fs, n = function_pair_estimates(o, x, xs, 0.3, AccuracySpec(), exact_variances(o))
        assert (f0, fs, n) == (PLANE.f(x), PLANE.f(xs), 1)

    def test_second_moment(self):
        spec = AccuracySpec(kappa_f=1.0)
        o = NoisyOracle(PLANE, sigma_f=1.0, seed=5)
        V = exact_variances(o)
        assert function_pair_batch(V.V_f, spec.kappa_f, 0.5) == 16
        x = np.array([1.0, 1.0])
        errs = []
        for _ in range(10_000):
            f0, _, n = function_pair_estimates(o, x, x, 0.5, spec, V)
            errs.append((f0 - PLANE.f(x)) ** 2)
        assert n == 16
        assert np.mean(errs) <= 0.0625 * 1.1

    def test_large_delta_clamps(self):
        assert function_pair_batch(1.0, 1.0, 1e6) == 1

    def test_invalid(self):
        with pytest.raises(InvalidArgumentError):
            function_pair_batch(1.0, 1.0, 0.0)
