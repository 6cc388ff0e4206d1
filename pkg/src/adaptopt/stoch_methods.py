"""Adaptive stochastic framework (STORM-style trust region and stochastic
line search) plus the plain SG baseline and the adaptive mini-batch
heuristic used in the logistic-regression comparison."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    ConfigurationError,
    InvalidArgumentError,
    NearStationarity,
    WorkLimitExceeded,
)
from .estimators import (
    DEFAULT_CAP,
    DEFAULT_N0,
    AccuracySpec,
    VarianceEstimate,
    adaptive_gradient_sample,
    chebyshev_sample_size,
    estimate_variance,
    exact_variances,
    function_pair_estimates,
)
from .det_methods import stepsize_update
from .models import LocalModel, model_reduction, tr_solve
from .problems import FiniteSumProblem, sample_eval
from .stopping import StoppingRule
from .trace import (
    CANDIDATE_STATIONARY,
    CONVERGED,
    MAX_ITERS,
    WORK_LIMIT,
    RunResult,
    TraceRecord,
)

METHODS = ("storm", "storm2", "sls")


@dataclass(frozen=True)
class StochConfig:
    eta: float = 0.1
    gamma: float = 2.0
    alpha_bar: float = 1.0
    alpha0: float = 1.0
    delta1: float = 0.1
    delta2: float = 0.1
    tau: float = 0.1
    accuracy: AccuracySpec = field(default_factory=AccuracySpec)
    Delta0: float = 1.0
    n0: int = DEFAULT_N0
    sample_cap: int = DEFAULT_CAP
    batch_cap: int = 10 ** 12
    pilot: int = 100
    theta: float = 0.5
    independent_pair: bool = False
    max_iters: int = 10_000

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ConfigurationError("eta must lie in (0, 1)")
        if not self.gamma > 1:
            raise ConfigurationError("gamma must exceed 1")
        if not 0 < self.alpha0 <= self.alpha_bar:
            raise ConfigurationError("alpha0 must lie in (0, alpha_bar]")
        for name in ("delta1", "delta2"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must lie in (0, 1)")
        if (1 - self.delta1) * (1 - self.delta2) <= 0.5:
            raise ConfigurationError("(1 - delta1)(1 - delta2) must exceed 1/2")
        if not self.tau > 0 or not self.Delta0 > 0:
            raise ConfigurationError("tau and Delta0 must be positive")
        if self.n0 < 1 or self.sample_cap < self.n0 or self.batch_cap < 1:
            raise ConfigurationError("invalid batch limits")
        if not 0 <= self.theta < 1:
            raise ConfigurationError("theta must lie in [0, 1)")


@dataclass(frozen=True)
class StochState:
    """Checkpointable iteration state.  Randomness lives in the oracle, so
    replaying from a state only requires a fresh oracle clone."""

    k: int
    x: np.ndarray
    alpha: float
    delta: float = 1.0
    samples: int = 0


def _check_cap(n, c: StochConfig):
    if n > c.batch_cap:
        raise WorkLimitExceeded(n, c.batch_cap)
    return n


def _truth(probe, x, with_chi=False):
    if probe is None:
        return None, None, None
    g = probe.gradient(x)
    chi_v = None
    if with_chi and probe.has_hessian:
        from .analysis import chi

        chi_v = chi(g, probe.hessian(x))
    return probe.f(x), float(np.linalg.norm(g)), chi_v


def _negative_curvature_step(g, H, radius):
    lam, Q = np.linalg.eigh(H)
    if lam[0] >= 0:
        return None
    u = Q[:, 0]
    gu = float(g @ u)
    if gu > 0 or (gu == 0 and tuple(-u) > tuple(u)):
        u = -u
    return radius * u


def _storm_step(s: StochState, o, c: StochConfig, V: VarianceEstimate, second: bool, probe):
    spec = replace(c.accuracy, order="second") if second else c.accuracy
    a = s.alpha
    rf, rg, rh = spec.radii(a)
    use_h = o.problem.has_hessian
    parts = 2 if use_h else 1
    n_g = chebyshev_sample_size(V.V_g, 1.0, rg, c.delta1 / parts) if rg > 0 else 1
    n_h = chebyshev_sample_size(V.V_h, 1.0, rh, c.delta1 / parts) if (use_h and rh > 0) else 1
    n_model = _check_cap(max(n_g, n_h), c)
    f_m, g, H = o.estimate(s.x, n_model, hessian=use_h)
    gnorm = float(np.linalg.norm(g))
    f_true, gn_true, chi_true = _truth(probe, s.x, second)
    rec = TraceRecord(k=s.k, x=s.x, f=f_true, grad_norm=gn_true, alpha=a, batch_model=n_model,
                      g_est_norm=gnorm, chi=chi_true)

    measure = gnorm
    if second and H is not None:
        measure = max(gnorm, -float(np.linalg.eigvalsh(H)[0]))
    if not measure >= c.tau * a:
        rec.W, rec.batch_fn, rec.samples = -1, 0, n_model
        return StochState(s.k + 1, s.x, stepsize_update(a, -1, c.gamma, c.alpha_bar), s.delta,
                          s.samples + n_model), rec

    m = LocalModel(s.x, f_m, g, H)
    step = tr_solve(m, a)
    if second and H is not None:
        sn = _negative_curvature_step(g, H, a)
        if sn is not None and model_reduction(m, sn) > step.mred:
            step = type(step)(sn, model_reduction(m, sn), float(np.linalg.norm(sn)))
    n_fn = _check_cap(chebyshev_sample_size(V.V_f, 1.0, rf, c.delta2 / 2) if rf > 0 else 1, c)
    xs = s.x + step.s
    f0, fs = o.pair(s.x, xs, n_fn, independent=c.independent_pair)
    est_red = f0 - fs
    ratio = est_red / step.mred if step.mred > 0 else -math.inf
    W = 1 if ratio >= c.eta else -1
    used = n_model + 2 * n_fn
    rec.W, rec.mred, rec.fred, rec.ratio, rec.step_norm = W, step.mred, est_red, ratio, step.norm
    rec.batch_fn, rec.f_est0, rec.f_ests, rec.samples = n_fn, f0, fs, used
    x_new = xs if W == 1 else s.x
    return StochState(s.k + 1, x_new, stepsize_update(a, W, c.gamma, c.alpha_bar), s.delta,
                      s.samples + used), rec


def storm_tr_iteration(s: StochState, o, c: StochConfig, V: Optional[VarianceEstimate] = None,
                       probe=None):
    """First-order STORM iteration: Taylor-like model accuracy at radius
    Delta_k = alpha_k with probability 1 - delta1, function estimates with
    probability 1 - delta2, success iff ratio >= eta and ||g|| >= tau alpha."""
    return _storm_step(s, o, c, V or exact_variances(o), False, probe)


def storm_tr2_iteration(s: StochState, o, c: StochConfig, V: Optional[VarianceEstimate] = None,
                        probe=None):
    """Second-order variant: accuracy radii kappa_f a^3, kappa_g a^2,
    kappa_H a; the step also considers the leftmost eigenvector so strict
    saddles are escaped, and the gate uses the estimated second-order
    measure max(||g||, -lambda_min(H))."""
    return _storm_step(s, o, c, V or exact_variances(o), True, probe)


def stoch_ls_iteration(s: StochState, o, c: StochConfig, V: Optional[VarianceEstimate] = None,
                       probe=None):
    """Stochastic Armijo line search with the Delta_k accuracy control."""
    V = V or exact_variances(o)
    spec = replace(c.accuracy, delta=c.delta1)
    a = s.alpha
    g, n_g, used_g = adaptive_gradient_sample(o, s.x, a, spec, V, c.n0, c.sample_cap)
    gnorm = float(np.linalg.norm(g))
    f_true, gn_true, _ = _truth(probe, s.x)
    step = a * -g
    xs = s.x + step
    f0, fs, n_f = function_pair_estimates(o, s.x, xs, s.delta, c.accuracy, V, c.independent_pair)
    _check_cap(n_f, c)
    est_red = f0 - fs
    pred = -float(g @ step)
    W = 1 if est_red >= c.eta * pred else -1
    used = used_g + 2 * n_f
    rec = TraceRecord(
        k=s.k, x=s.x, f=f_true, grad_norm=gn_true, alpha=a, W=W, mred=pred, fred=est_red,
        ratio=est_red / pred if pred > 0 else None, step_norm=float(np.linalg.norm(step)),
        delta=s.delta, batch_model=n_g, batch_fn=n_f, g_est_norm=gnorm, f_est0=f0, f_ests=fs,
        samples=used,
    )
    if W == 1:
        reliable = a * gnorm * gnorm >= s.delta * s.delta
        rec.reliable = reliable
        delta = s.delta * math.sqrt(c.gamma) if reliable else s.delta / math.sqrt(c.gamma)
        new = StochState(s.k + 1, xs, stepsize_update(a, 1, c.gamma, c.alpha_bar), delta,
                         s.samples + used)
    else:
        new = StochState(s.k + 1, s.x, stepsize_update(a, -1, c.gamma, c.alpha_bar), s.delta,
                         s.samples + used)
    return new, rec


_ITER = {"storm": storm_tr_iteration, "storm2": storm_tr2_iteration, "sls": stoch_ls_iteration}


def replay_iteration(method: str, state: StochState, oracle, config: StochConfig, V=None):
    if method not in _ITER:
        raise ConfigurationError(f"unknown stochastic method {method!r}")
    return _ITER[method](state, oracle, config, V)


def resolve_variances(oracle, x0, c: StochConfig):
    """Known variances for synthetic oracles, pilot estimate otherwise."""
    if oracle.variances() is not None:
        return exact_variances(oracle), "exact"
    return estimate_variance(oracle, x0, c.pilot), "pilot"


def run_stochastic(method: str, o, c: StochConfig, x0, stop: StoppingRule,
                   probe=None, V: Optional[VarianceEstimate] = None) -> RunResult:
    """Run Algorithm-2-style iterations until ``stop`` fires.

    With a probe problem the stopping rule is evaluated on exact
    quantities.  Without one the surrogate ||g_k|| <= eps / (1 + theta) on
    the iteration's own gradient estimate is used and the run ends in the
    state x_k at which the estimate qualified.
    """
    if method not in _ITER:
        raise ConfigurationError(f"unknown stochastic method {method!r}")
    x0 = np.asarray(x0, dtype=float).copy()
    regime = "given"
    if V is None:
        V, regime = resolve_variances(o, x0, c)
    second = method == "storm2" or stop.kind == "second_order"
    s = StochState(0, x0, c.alpha0, c.Delta0, 0)
    records = []
    status, T = MAX_ITERS, None

    def snapshot(st):
        f, gn, ch = _truth(probe, st.x, second)
        return TraceRecord(k=st.k, x=st.x, f=f, grad_norm=gn, alpha=st.alpha,
                           delta=st.delta if method == "sls" else None, chi=ch)

    snap = snapshot(s)
    while True:
        if probe is not None and stop.met_at(snap):
            status, T = CONVERGED, s.k
            break
        if s.k >= c.max_iters:
            break
        try:
            new, rec = _ITER[method](s, o, c, V, probe)
        except NearStationarity:
            status = CANDIDATE_STATIONARY
            break
        except WorkLimitExceeded:
            status = WORK_LIMIT
            break
        if method == "sls":
            rec.delta = s.delta
        if probe is None and rec.g_est_norm <= stop.eps / (1 + c.theta):
            status, T = CONVERGED, s.k
            s = replace(s, samples=new.samples)
            break
        records.append(rec)
        s = new
        snap = snapshot(s)
        if probe is not None and stop.kind == "next_grad_norm":
            rec.next_grad_norm = snap.grad_norm
            if stop.met_after(rec):
                status, T = CONVERGED, rec.k
                break
    return RunResult(method, records, snap, status, T, samples=s.samples,
                     info={"variance_regime": regime, "V_f": V.V_f, "V_g": V.V_g})


# ---------------------------------------------------------------------------
# SG baseline and the adaptive mini-batch heuristic


@dataclass
class SGResult:
    x: np.ndarray
    epochs: list
    test_accuracy: list
    train_loss: list
    info: dict = field(default_factory=dict)


def _sampler(rng, N, sampling):
    if sampling not in ("iid", "shuffle"):
        raise InvalidArgumentError(f"unknown sampling mode {sampling!r}")
    perm, pos = None, N

    def draw(b):
        nonlocal perm, pos
        if sampling == "iid":
            return rng.integers(0, N, size=b)
        out = []
        while b > 0:
            if pos >= N:
                perm, pos = rng.permutation(N), 0
            take = min(b, N - pos)
            out.append(perm[pos:pos + take])
            pos += take
            b -= take
        return np.concatenate(out)

    return draw


def sg_baseline(p: FiniteSumProblem, alpha: float, batch: int, epochs: int, seed: int,
                x0=None, sampling: str = "iid") -> SGResult:
    """Constant-stepsize mini-batch SG; test accuracy after every epoch
    (epoch = ceil(N / batch) iterations; epoch 0 is the starting point)."""
    if batch < 1:
        raise InvalidArgumentError("batch must be >= 1")
    rng = np.random.default_rng(seed)
    draw = _sampler(rng, p.N, sampling)
    x = np.zeros(p.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    iters = math.ceil(p.N / batch)
    res = SGResult(x, [0], [p.test_accuracy(x)], [p.f(x)],
                   {"sampling": sampling, "alpha": alpha, "batch": batch})
    for e in range(1, epochs + 1):
        for _ in range(iters):
            _, g, _ = sample_eval(p, x, draw(batch))
            x = x - alpha * g
        res.epochs.append(e)
        res.test_accuracy.append(p.test_accuracy(x))
        res.train_loss.append(p.f(x))
    res.x = x
    return res


def adaptive_sg_experiment(p: FiniteSumProblem, alpha0: float, batch0: int, factors=(2.0, 2.0),
                           epochs: int = 10, seed: int = 0, eta: float = 1e-4,
                           alpha_max: float = 1.0, x0=None, sampling: str = "iid") -> SGResult:
    """Mini-batch Armijo heuristic: compare the mini-batch objective at x and
    x - alpha g on the same batch.  Reject: shrink alpha, grow the batch.
    Accept: take the step, grow alpha (capped), shrink the batch (floor 1).

    The epoch budget counts samples used for gradients; samples spent on
    the trial-point objective are reported separately in ``info``.
    """
    g_a, g_b = factors
    if batch0 < 1:
        raise InvalidArgumentError("batch0 must be >= 1")
    if g_a <= 1 or g_b <= 1:
        raise InvalidArgumentError("factors must exceed 1")
    rng = np.random.default_rng(seed)
    draw = _sampler(rng, p.N, sampling)
    x = np.zeros(p.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    alpha, batch = float(alpha0), int(batch0)
    res = SGResult(x, [0], [p.test_accuracy(x)], [p.f(x)], {"sampling": sampling})
    grad_samples = trial_samples = accepts = rejects = 0
    next_mark = p.N
    alphas, batches = [], []
    while len(res.epochs) <= epochs:
        rows = draw(batch)
        f_b, g, _ = sample_eval(p, x, rows)
        trial = x - alpha * g
        f_t = sample_eval(p, trial, rows)[0]
        grad_samples += batch
        trial_samples += batch
        if f_b - f_t >= eta * alpha * float(g @ g):
            x = trial
            alpha = min(g_a * alpha, alpha_max)
            batch = max(int(math.floor(batch / g_b)), 1)
            accepts += 1
        else:
            alpha = alpha / g_a
            batch = min(int(math.ceil(g_b * batch)), p.N)
            rejects += 1
        alphas.append(alpha)
        batches.append(batch)
        while grad_samples >= next_mark and len(res.epochs) <= epochs:
            res.epochs.append(len(res.epochs))
            res.test_accuracy.append(p.test_accuracy(x))
            res.train_loss.append(p.f(x))
            next_mark += p.N
    res.x = x
    res.info.update(accepts=accepts, rejects=rejects, grad_samples=grad_samples,
                    trial_samples=trial_samples, final_alpha=alpha, final_batch=batch,
                    alphas=alphas, batches=batches)
    return res


def adaptive_batch_update(batch: int, accepted: bool, gamma_b: float, N: int) -> int:
    """Batch-size rule of the heuristic, exposed for direct testing."""
    if accepted:
        return max(int(math.floor(batch / gamma_b)), 1)
    return min(int(math.ceil(gamma_b * batch)), N)
