import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptopt.analysis import ProgressMeasure, one_step_conditional_check
from adaptopt.det_methods import DetConfig, run_deterministic
from adaptopt.errors import ConfigurationError, InvalidArgumentError
from adaptopt.estimators import AccuracySpec, exact_variances
from adaptopt.harness.data import gen_synthetic
from adaptopt.problems import DeterministicProblem, FiniteSumOracle, NoisyOracle, logistic_problem, quadratic_problem
from adaptopt.stoch_methods import (
    StochConfig,
    StochState,
    adaptive_batch_update,
    adaptive_sg_experiment,
    run_stochastic,
    sg_baseline,
    stoch_ls_iteration,
    storm_tr2_iteration,
    storm_tr_iteration,
)
from adaptopt.stopping import StoppingRule
from adaptopt.trace import CANDIDATE_STATIONARY, CONVERGED

QUAD = quadratic_problem([1.0, 4.0], [1.0, 1.0])
X0 = np.array([-2.0, 3.0])


def accept_sequence(result):
    return [r.W for r in result.records]


class TestNoiselessReduction:
    def test_storm_matches_tr_with_reciprocal_gate(self):
        det = run_deterministic("tr", QUAD, DetConfig(tau=2.0, eta=0.1, alpha_bar=1.0, alpha0=1.0),
                                X0, StoppingRule("grad_norm", 1e-4))
        sto = run_stochastic("storm", NoisyOracle(QUAD), StochConfig(tau=0.5), X0,
                             StoppingRule("grad_norm", 1e-4), probe=QUAD)
        assert accept_sequence(sto) == accept_sequence(det)
        assert sto.stop_index == det.stop_index is not None
        np.testing.assert_array_equal(sto.final.x, det.final.x)

    def test_sls_matches_ls(self):
        c = StochConfig(eta=0.3, alpha0=0.5, alpha_bar=1.0)
        det = run_deterministic("ls", QUAD, DetConfig(eta=0.3, alpha0=0.5, alpha_bar=1.0), X0,
                                StoppingRule("grad_norm", 1e-4))
        sto = run_stochastic("sls", NoisyOracle(QUAD), c, X0, StoppingRule("grad_norm", 1e-4),
                             probe=QUAD)
        assert accept_sequence(sto) == accept_sequence(det)
        for a, b in zip(sto.records, det.records):
            np.testing.assert_array_equal(a.x, b.x)
            assert a.alpha == b.alpha

    def test_forced_failure(self):
        class Flat(NoisyOracle):
            def pair(self, x, xs, n, independent=False):
                return 5.0, 5.0

        s = StochState(0, X0.copy(), 0.5)
        new, rec = storm_tr_iteration(s, Flat(QUAD), StochConfig(tau=0.01))
        assert rec.ratio == 0 and rec.W == -1
        np.testing.assert_array_equal(new.x, X0)
        assert new.alpha == 0.25


class TestLsControl:
    def test_reliable_success(self):
        # f = |x|^2 / 2 at (2, 0): ||g||^2 = 4, alpha = 0.5, Delta = 1
        p = quadratic_problem([1.0, 1.0], [0.0, 0.0])
        c = StochConfig(gamma=2.0)
        new, rec = stoch_ls_iteration(StochState(0, np.array([2.0, 0.0]), 0.5, 1.0), NoisyOracle(p), c)
        assert rec.W == 1 and rec.reliable
        assert new.delta == pytest.approx(math.sqrt(2.0))
        assert new.alpha == 1.0

    def test_unreliable_success_shrinks(self):
        p = quadratic_problem([1.0, 1.0], [0.0, 0.0])
        new, rec = stoch_ls_iteration(StochState(0, np.array([0.5, 0.0]), 0.5, 1.0), NoisyOracle(p),
                                      StochConfig(gamma=4.0))
        # 0.5 * 0.25 < 1
        assert rec.W == 1 and not rec.reliable
        assert new.delta == 0.5

    def test_failure_keeps_delta(self):
        p = quadratic_problem([2.0], [0.0])
        s = StochState(0, np.array([1.0]), 1.0, 0.7)
        new, rec = stoch_ls_iteration(s, NoisyOracle(p), StochConfig(eta=0.5))
        assert rec.W == -1
        assert new.delta == 0.7 and new.alpha == 0.5 and new.x[0] == 1.0

    def test_near_stationarity_status(self):
        o = NoisyOracle(QUAD, 0.1, 0.1, seed=0)
        c = StochConfig(sample_cap=2 ** 8)
        r = run_stochastic("sls", o, c, np.array([1.0, 1.0]), StoppingRule("grad_norm", 1e-12))
        assert r.status == CANDIDATE_STATIONARY


class TestSecondOrder:
    def test_saddle_escape(self):
        D = np.diag([1.0, -1.0])
        p = DeterministicProblem(n=2, fun=lambda x: 0.5 * x @ D @ x, grad=lambda x: D @ x,
                                 hess=lambda x: D)
        s = StochState(0, np.zeros(2), 0.5)
        new, rec = storm_tr2_iteration(s, NoisyOracle(p), StochConfig(tau=0.1))
        assert rec.W == 1
        assert p.f(new.x) < p.f(s.x)
        np.testing.assert_allclose(new.x, [0.0, 0.5])

    def test_chi_zero_stops(self):
        p = quadratic_problem([1.0, 2.0], [0.0, 0.0])
        r = run_stochastic("storm2", NoisyOracle(p), StochConfig(), np.zeros(2),
                           StoppingRule("second_order", 1e-6), probe=p)
        assert r.status == CONVERGED and r.stop_index == 0 and r.final.chi == 0

    def test_accuracy_sizing(self):
        first = AccuracySpec(kappa_f=2.0).radii(0.1)[0]
        second = AccuracySpec(kappa_f=2.0, order="second").radii(0.1)[0]
        assert first == pytest.approx(2e-2) and second == pytest.approx(2e-3)

    def test_second_order_batches_are_larger(self):
        o = NoisyOracle(QUAD, 0.1, 0.1, seed=0)
        s = StochState(0, X0.copy(), 0.1)
        _, r1 = storm_tr_iteration(s, o, StochConfig(tau=0.01))
        _, r2 = storm_tr2_iteration(s, o.clone(0), StochConfig(tau=0.01))
        assert r2.batch_model > r1.batch_model and r2.batch_fn > r1.batch_fn


class TestNoisyRuns:
    def run(self, method, seed, **kw):
        o = NoisyOracle(QUAD, 0.1, 0.1, seed=seed)
        return run_stochastic(method, o, StochConfig(tau=0.5, **kw), X0,
                              StoppingRule("grad_norm", 1e-2), probe=QUAD)

    @settings(max_examples=15)
    @given(st.integers(0, 10_000), st.sampled_from(["storm", "storm2", "sls"]))
    def test_trace_invariants(self, seed, method):
        c = StochConfig(tau=0.5)
        r = self.run(method, seed)
        snaps = r.records + [r.final]
        assert r.samples == sum(rec.samples for rec in r.records)
        reliable = unreliable = 0
        for k, rec in enumerate(r.records):
            nxt = snaps[k + 1]
            if rec.W == -1:
                np.testing.assert_array_equal(nxt.x, rec.x)
                assert nxt.alpha == rec.alpha / c.gamma
                if method == "sls":
                    assert nxt.delta == rec.delta
            else:
                assert nxt.alpha == min(c.gamma * rec.alpha, c.alpha_bar)
                if method == "sls":
                    reliable += bool(rec.reliable)
                    unreliable += not rec.reliable
        if method == "sls":
            lhs = math.log(r.final.delta / c.Delta0, c.gamma)
            assert lhs == pytest.approx(0.5 * (reliable - unreliable), abs=1e-9)

    def test_determinism(self):
        a, b = self.run("storm", 7), self.run("storm", 7)
        assert len(a.records) == len(b.records)
        for ra, rb in zip(a.records, b.records):
            np.testing.assert_array_equal(ra.x, rb.x)
            assert (ra.alpha, ra.W, ra.f_est0, ra.f_ests) == (rb.alpha, rb.W, rb.f_est0, rb.f_ests)

    def test_non_monotone_witness(self):
        found = False
        for seed in range(10):
            r = self.run("storm", seed)
            fs = [rec.f for rec in r.records] + [r.final.f]
            if r.status == CONVERGED and any(b > a for a, b in zip(fs, fs[1:])):
                found = True
                break
        assert found

    def test_one_step_success_frequency(self):
        p = quadratic_problem([1.0], [0.0])
        c = StochConfig(tau=0.5)
        o = NoisyOracle(p, 0.1, 0.1, seed=0)
        rep = one_step_conditional_check(StochState(0, np.array([1.0]), 0.25), "storm", o, c,
                                         ProgressMeasure("tr_first", 0.5), M=1000)
        assert rep.p_hat >= (1 - c.delta1) * (1 - c.delta2) - 0.03

    def test_surrogate_stop_without_probe(self):
        o = NoisyOracle(QUAD, 0.01, 0.01, seed=1)
        c = StochConfig(tau=0.5)
        r = run_stochastic("storm", o, c, X0, StoppingRule("grad_norm", 1e-1))
        assert r.status == CONVERGED
        assert np.linalg.norm(QUAD.gradient(r.final.x)) <= 1e-1 * 1.5
        assert r.info["variance_regime"] == "exact"

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError):
            run_stochastic("sgd", NoisyOracle(QUAD), StochConfig(), X0, StoppingRule("grad_norm", 1.0))


class TestConfig:
    def test_delta_product(self):
        with pytest.raises(ConfigurationError):
            StochConfig(delta1=0.7, delta2=0.7)

    @pytest.mark.parametrize("kw", [{"eta": 1.0}, {"gamma": 0.5}, {"alpha0": 3.0}, {"tau": 0.0},
                                    {"Delta0": 0.0}, {"n0": 0}, {"theta": 1.0}, {"delta1": 0.0}])
    def test_rejects(self, kw):
        with pytest.raises(ConfigurationError):
            StochConfig(**kw)


@pytest.fixture(scope="module")
def small_logistic():
    return logistic_problem(gen_synthetic(600, 5, 2.0, 0), 1e-4)


class TestSG:
    def test_zero_stepsize(self, small_logistic):
        p = small_logistic
        x0 = np.full(p.n, 0.3)
        r = sg_baseline(p, 0.0, 16, 2, seed=0, x0=x0)
        np.testing.assert_array_equal(r.x, x0)
        assert r.test_accuracy == [p.test_accuracy(x0)] * 3

    def test_learns(self, small_logistic):
        r = sg_baseline(small_logistic, 1.0, 16, 5, seed=0)
        assert r.test_accuracy[-1] > 0.9 and r.epochs == list(range(6))

    def test_shuffle_mode(self, small_logistic):
        r = sg_baseline(small_logistic, 1.0, 16, 2, seed=0, sampling="shuffle")
        assert r.info["sampling"] == "shuffle" and r.test_accuracy[-1] > 0.9

    def test_invalid(self, small_logistic):
        with pytest.raises(InvalidArgumentError):
            sg_baseline(small_logistic, 1.0, 0, 1, seed=0)
        with pytest.raises(InvalidArgumentError):
            sg_baseline(small_logistic, 1.0, 4, 1, seed=0, sampling="cyclic")

    def test_batch_update(self):
        assert adaptive_batch_update(64, False, 2.0, 10_000) == 128
        assert adaptive_batch_update(1, True, 2.0, 10_000) == 1
        assert adaptive_batch_update(64, True, 2.0, 10_000) == 32
        assert adaptive_batch_update(6000, False, 2.0, 10_000) == 10_000

    def test_adaptive_trajectory_follows_rule(self, small_logistic):
        r = adaptive_sg_experiment(small_logistic, 0.1, 64, epochs=3, seed=0)
        info = r.info
        batch, alpha = 64, 0.1
        for a, b in zip(info["alphas"], info["batches"]):
            accepted = a > alpha or (a == alpha == 1.0)
            assert b == adaptive_batch_update(batch, accepted, 2.0, small_logistic.N)
            alpha, batch = a, b
        assert info["grad_samples"] >= 3 * small_logistic.N
        assert len(r.epochs) == 4

    def test_adaptive_rejects_bad_factors(self, small_logistic):
        with pytest.raises(InvalidArgumentError):
            adaptive_sg_experiment(small_logistic, 0.1, 64, factors=(1.0, 2.0))

    def test_finite_sum_oracle_regime(self, small_logistic):
        o = FiniteSumOracle(small_logistic, seed=0)
        r = run_stochastic("storm", o, StochConfig(max_iters=5, pilot=50), np.zeros(small_logistic.n),
                           StoppingRule("grad_norm", 1e-8), probe=small_logistic.as_deterministic())
        assert r.info["variance_regime"] == "pilot"
        assert len(r.records) == 5
