import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from adaptopt.errors import ConfigurationError, InvalidArgumentError
from adaptopt.models import (
    LocalModel,
    Preconditioner,
    cauchy_decrease_bound,
    cubic_solve,
    ls_direction,
    model_reduction,
    tr_solve,
)


def model1d(g, H, f0=1.0, sigma=0.0):
    return LocalModel(np.zeros(1), f0, np.array([g]), np.array([[H]]), sigma)


def sym_matrix(vals, n):
    A = np.array(vals[: n * n]).reshape(n, n)
    return 0.5 * (A + A.T)


class TestTrSolve:
    def test_interior_minimizer(self):
        step = tr_solve(model1d(2.0, 2.0), 10.0)
        assert step.s[0] == pytest.approx(-1.0)
        assert step.mred == pytest.approx(1.0)

    def test_boundary_active(self):
        step = tr_solve(model1d(2.0, 2.0), 0.5)
        assert step.s[0] == pytest.approx(-0.5)
        assert step.mred == pytest.approx(0.75)

    def test_zero_gradient(self):
        step = tr_solve(model1d(0.0, 2.0), 1.0)
        assert step.mred == 0.0 and np.all(step.s == 0)

    def test_negative_curvature_reaches_boundary(self):
        m = LocalModel(np.zeros(2), 0.0, np.array([1.0, 0.0]), np.diag([-1.0, 2.0]))
        step = tr_solve(m, 0.5)
        assert step.norm == pytest.approx(0.5)
        assert step.mred >= cauchy_decrease_bound(1.0, 2.0, 0.5)

    def test_without_curvature_is_scaled_gradient(self):
        m = LocalModel(np.zeros(2), 0.0, np.array([3.0, 4.0]))
        step = tr_solve(m, 1.0)
        np.testing.assert_allclose(step.s, [-0.6, -0.8])

    @given(n=st.integers(1, 6),
           vals=st.lists(st.floats(-10, 10), min_size=36, max_size=36),
           gv=st.lists(st.floats(-10, 10), min_size=6, max_size=6),
           radius=st.floats(1e-3, 10))
    def test_radius_and_cauchy_decrease(self, n, vals, gv, radius):
        H = sym_matrix(vals, n)
        g = np.array(gv[:n])
        m = LocalModel(np.zeros(n), 0.0, g, H)
        step = tr_solve(m, radius)
        assert step.norm <= radius * (1 + 1e-12)
        gnorm = float(np.linalg.norm(g))
        beta = max(float(np.linalg.norm(H, 2)), 1e-12)
        assert step.mred >= cauchy_decrease_bound(gnorm, beta, radius) - 1e-10

    def test_random_instances_bulk(self):
        r = np.random.default_rng(0)
        for _ in range(10_000):
            n = int(r.integers(1, 11))
            A = r.standard_normal((n, n))
            H = 0.5 * (A + A.T)
            g = r.standard_normal(n)
            radius = float(10 ** r.uniform(-3, 1))
            step = tr_solve(LocalModel(np.zeros(n), 0.0, g, H), radius)
            assert step.norm <= radius * (1 + 1e-12)
            bound = cauchy_decrease_bound(np.linalg.norm(g), np.linalg.norm(H, 2), radius)
            assert step.mred >= bound - 1e-10


class TestCauchyBound:
    @pytest.mark.parametrize("args,expected", [((2, 2, 1), 1.0), ((0, 1, 1), 0.0), ((2, 1, 10), 2.0)])
    def test_values(self, args, expected):
        assert cauchy_decrease_bound(*args) == expected


class TestLsDirection:
    def test_identity(self):
        m = LocalModel(np.zeros(2), 0.0, np.array([3.0, 4.0]))
        d = ls_direction(m, Preconditioner.identity(2), 1.0)
        np.testing.assert_array_equal(d, [-3.0, -4.0])
        assert np.linalg.norm(d) == 5.0

    def test_diagonal(self):
        m = LocalModel(np.zeros(2), 0.0, np.array([1.0, 1.0]))
        d = ls_direction(m, Preconditioner.from_matrix(np.diag([2.0, 1.0])), 2.0)
        np.testing.assert_array_equal(d, [-2.0, -1.0])

    def test_zero_gradient(self):
        m = LocalModel(np.zeros(2), 0.0, np.zeros(2))
        assert np.all(ls_direction(m, Preconditioner.identity(2), 1.0) == 0)

    def test_cap_below_kappa2_rejected(self):
        m = LocalModel(np.zeros(2), 0.0, np.ones(2))
        with pytest.raises(ConfigurationError):
            ls_direction(m, Preconditioner.from_matrix(np.diag([2.0, 1.0])), 1.5)

    @given(st.lists(st.floats(0.1, 5), min_size=3, max_size=3),
           st.lists(st.floats(-5, 5), min_size=3, max_size=3))
    def test_descent_and_norm_bounds(self, ev, gv):
        M = Preconditioner.from_matrix(np.diag(ev))
        g = np.array(gv)
        d = ls_direction(LocalModel(np.zeros(3), 0.0, g), M, M.kappa2)
        assert g @ d <= -M.kappa1 * (g @ g) * (1 - 1e-12)
        assert np.linalg.norm(d) <= M.kappa2 * np.linalg.norm(g) * (1 + 1e-12)

    def test_non_positive_definite_rejected(self):
        with pytest.raises(InvalidArgumentError):
            Preconditioner.from_matrix(np.diag([1.0, -1.0]))


class TestCubicSolve:
    def test_one_dimensional_root(self):
        # model 1 + 2s + s^2 + |s|^3/3: stationarity 2 + 2s - s^2 = 0 for s < 0
        step = cubic_solve(model1d(2.0, 2.0), alpha=1.0)
        assert step.s[0] == pytest.approx(1 - math.sqrt(3), abs=1e-12)

    def test_zero_gradient_positive_definite(self):
        m = LocalModel(np.zeros(2), 0.0, np.zeros(2), np.diag([1.0, 3.0]))
        step = cubic_solve(m, alpha=1.0)
        assert step.mred == 0.0 and np.all(step.s == 0)

    def test_saddle_tie_broken_to_positive(self):
        # -s^2 + |s|^3/3 has minimizers s = +-2 with value -4/3
        step = cubic_solve(model1d(0.0, -2.0), alpha=1.0)
        assert step.s[0] == pytest.approx(2.0)
        assert step.mred == pytest.approx(4.0 / 3.0)

    def test_requires_curvature(self):
        m = LocalModel(np.zeros(1), 0.0, np.ones(1))
        with pytest.raises(ConfigurationError):
            cubic_solve(m, alpha=1.0)

    @pytest.mark.parametrize("seed", range(40))
    def test_first_order_condition(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(1, 6))
        A = r.standard_normal((n, n))
        m = LocalModel(np.zeros(n), 0.0, r.standard_normal(n), 0.5 * (A + A.T),
                       1.0 / (3 * float(10 ** r.uniform(-1, 1))))
        step = cubic_solve(m)
        assert np.linalg.norm(m.grad_at(step.s)) <= 1e-8 * max(1.0, np.linalg.norm(m.g))
        assert step.mred >= 0

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_brute_force(self, seed):
        r = np.random.default_rng(100 + seed)
        n = 1 + seed % 2
        A = r.standard_normal((n, n)) * 2
        m = LocalModel(np.zeros(n), 0.0, r.standard_normal(n), 0.5 * (A + A.T), 1.0 / 3.0)
        # grid then local polish of the best grid points
        axis = np.linspace(-6, 6, 121)
        grid = np.array(np.meshgrid(*([axis] * n))).reshape(n, -1).T
        vals = np.array([m.increment(s) for s in grid])
        best = min(minimize(m.increment, grid[i], method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000}).fun
                   for i in np.argsort(vals)[:5])
        assert m.increment(cubic_solve(m).s) <= best + 1e-6


class TestModelReduction:
    def test_zero_step(self):
        assert model_reduction(model1d(2.0, 2.0), np.zeros(1)) == 0.0

    def test_quadratic(self):
        assert model_reduction(model1d(2.0, 2.0), np.array([-1.0])) == 1.0

    def test_linear(self):
        m = LocalModel(np.zeros(1), 0.0, np.array([1.0]))
        assert model_reduction(m, np.array([-0.5])) == 0.5

    @given(st.lists(st.floats(-5, 5), min_size=7, max_size=7), st.floats(0, 3))
    def test_consistency_identity(self, v, sigma):
        m = LocalModel(np.zeros(2), v[0], np.array(v[1:3]), np.array([[v[3], v[4]], [v[4], v[5]]]),
                       sigma)
        s = np.array([v[6], -v[6] / 2])
        assert model_reduction(m, s) + m.value(s) - m.f0 == pytest.approx(0.0, abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            model_reduction(model1d(1.0, 1.0), np.zeros(2))


def test_asymmetric_curvature_rejected():
    with pytest.raises(InvalidArgumentError):
        LocalModel(np.zeros(2), 0.0, np.zeros(2), np.array([[1.0, 2.0], [0.0, 1.0]]))
