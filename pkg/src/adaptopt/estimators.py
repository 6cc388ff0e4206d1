"""Sample-size rules and accuracy tests for stochastic estimates.

Probability guarantees come from Chebyshev's inequality: an average of n
i.i.d. draws with per-draw (trace) variance V misses its mean by more than
t with probability at most V / (n t^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NearStationarity

DEFAULT_N0 = 4
DEFAULT_CAP = 2 ** 16


@dataclass(frozen=True)
class AccuracySpec:
    kappa_f: float = 1.0
    kappa_g: float = 1.0
    kappa_h: float = 1.0
    order: str = "first"
    delta: float = 0.1

    def __post_init__(self):
        if min(self.kappa_f, self.kappa_g, self.kappa_h) < 0:
            raise InvalidArgumentError("accuracy coefficients must be nonnegative")
        if self.order not in ("first", "second"):
            raise InvalidArgumentError("order must be 'first' or 'second'")
        if not 0 < self.delta < 0.5:
            raise InvalidArgumentError("failure probability must lie in (0, 1/2)")

    def radii(self, Delta: float):
        """Right-hand sides (f, g, H) of the Taylor-like accuracy bounds."""
        if self.order == "first":
            return self.kappa_f * Delta ** 2, self.kappa_g * Delta, self.kappa_h
        return self.kappa_f * Delta ** 3, self.kappa_g * Delta ** 2, self.kappa_h * Delta


@dataclass(frozen=True)
class VarianceEstimate:
    V_f: float
    V_g: float
    pilot: int
    V_h: float = 0.0

    def __post_init__(self):
        if min(self.V_f, self.V_g, self.V_h) < 0:
            raise InvalidArgumentError("variances must be nonnegative")
        if self.pilot < 2:
            raise InvalidArgumentError("pilot size must be at least 2")


def exact_variances(oracle) -> VarianceEstimate:
    """Wrap an oracle's known per-sample variances (synthetic oracles)."""
    v = oracle.variances()
    if v is None:
        raise InvalidArgumentError("oracle does not know its variances")
    return VarianceEstimate(v[0], v[1], pilot=2, V_h=v[2])


def chebyshev_sample_size(V: float, kappa: float, Delta: float, delta: float) -> int:
    """Smallest n with V / (n (kappa Delta)^2) <= delta, at least 1."""
    if V < 0:
        raise InvalidArgumentError("variance must be nonnegative")
    if kappa <= 0 or Delta <= 0:
        raise InvalidArgumentError("kappa and Delta must be positive")
    if not 0 < delta < 1:
        raise InvalidArgumentError("delta must lie in (0, 1)")
    if V == 0:
        return 1
    q = V / (delta * kappa * kappa * Delta * Delta)
    if not math.isfinite(q):
        raise InvalidArgumentError("sample size overflows; Delta too small")
    # absorb rounding in the quotient so exact integers are not bumped up
    return max(1, math.ceil(q * (1 - 1e-12)))


def estimate_variance(oracle, x, pilot: int) -> VarianceEstimate:
    """Unbiased per-sample variances from ``pilot`` single-sample draws.

    V_g is the trace of the sample covariance of the gradient draws, i.e.
    the estimate of E||g - grad f||^2 that the Chebyshev sizing needs.
    """
    if pilot < 2:
        raise InvalidArgumentError("pilot size must be at least 2")
    fs = np.empty(pilot)
    gs = np.empty((pilot, oracle.n))
    for i in range(pilot):
        fs[i], gs[i] = oracle.draw(x)
    V_f = float(fs.var(ddof=1))
    V_g = float(np.sum(gs.var(axis=0, ddof=1)))
    return VarianceEstimate(V_f, V_g, pilot)


def taylor_accuracy_holds(est, truth, Delta: float, spec: AccuracySpec) -> bool:
    """Conjunction of the function, gradient and (when both are given)
    Hessian accuracy bounds at radius Delta."""
    f_est, g_est, H_est = (tuple(est) + (None,))[:3]
    f, g, H = (tuple(truth) + (None,))[:3]
    rf, rg, rh = spec.radii(Delta)
    if abs(f_est - f) > rf:
        return False
    if np.linalg.norm(np.asarray(g_est) - np.asarray(g)) > rg:
        return False
    if H_est is not None and H is not None:
        if np.linalg.norm(np.asarray(H_est) - np.asarray(H), 2) > rh:
            return False
    return True


def gradient_norm_condition_holds(g, grad_true, theta: float) -> bool:
    """||g - grad f|| <= theta ||grad f||.  Needs the true gradient, so it
    is a test-side check only."""
    if not 0 <= theta < 1:
        raise InvalidArgumentError("theta must lie in [0, 1)")
    g = np.asarray(g, dtype=float)
    grad_true = np.asarray(grad_true, dtype=float)
    return bool(np.linalg.norm(g - grad_true) <= theta * np.linalg.norm(grad_true))


def required_gradient_batch(V_g: float, kappa_g: float, alpha: float, gnorm: float, delta: float) -> int:
    """Chebyshev batch for ||g - grad f|| <= kappa_g alpha ||g||."""
    if V_g == 0:
        return 1
    if gnorm == 0:
        return math.inf
    return chebyshev_sample_size(V_g, kappa_g, alpha * gnorm, delta)


def adaptive_gradient_sample(oracle, x, alpha: float, spec: AccuracySpec, V: VarianceEstimate,
                             n0: int = DEFAULT_N0, cap: int = DEFAULT_CAP):
    """Guess-and-double sampling for the accuracy radius alpha ||g||.

    Draw g on n samples, compute the batch that the radius implied by this
    very estimate requires, and double n until n meets it.  Returns
    ``(g, n, samples_used)``; raises ``NearStationarity`` once the cap is
    reached, since the requirement grows without bound as ||g|| -> 0.
    """
    if alpha <= 0:
        raise InvalidArgumentError("alpha must be positive")
    n = max(1, int(n0))
    used = 0
    while True:
        _, g, _ = oracle.estimate(x, n)
        used += n
        gnorm = float(np.linalg.norm(g))
        need = required_gradient_batch(V.V_g, spec.kappa_g, alpha, gnorm, spec.delta)
        if n >= need:
            return g, n, used
        if n >= cap:
            raise NearStationarity(n, gnorm)
        n = min(2 * n, cap)


def function_pair_batch(V_f: float, kappa_f: float, Delta: float) -> int:
    """Batch enforcing E|f_est - f|^2 <= kappa_f Delta^4."""
    if Delta <= 0:
        raise InvalidArgumentError("Delta must be positive")
    if V_f == 0:
        return 1
    if kappa_f <= 0:
        raise InvalidArgumentError("kappa_f must be positive")
    q = V_f / (kappa_f * Delta ** 4)
    if not math.isfinite(q):
        raise InvalidArgumentError("sample size overflows; Delta too small")
    return max(1, math.ceil(q * (1 - 1e-12)))


def function_pair_estimates(oracle, x, xs, Delta: float, spec: AccuracySpec, V: VarianceEstimate,
                            independent: bool = False):
    """Estimates of f(x) and f(xs) on a common batch size sized by the
    known Delta^4 arm of the second-moment bound.  Returns (f0, fs, n)."""
    n = function_pair_batch(V.V_f, spec.kappa_f, Delta)
    f0, fs = oracle.pair(x, xs, n, independent=independent)
    return f0, fs, n
