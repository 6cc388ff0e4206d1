"""Progress measures, stopping times and runtime verification of the
worst-case (deterministic) and expected (stochastic) complexity arguments.

Nothing here influences the iterates; every function consumes traces.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidArgumentError
from .stopping import StoppingRule
from .trace import RunResult, TraceRecord

MEASURE_KINDS = (
    "tr_first", "ls_first", "cubic", "tr_second",
    "convex_ls", "strongly_convex_ls", "stoch_ls",
)

# stopping-rule kind paired with each progress measure
STOP_KIND = {
    "tr_first": "grad_norm",
    "ls_first": "grad_norm",
    "cubic": "next_grad_norm",
    "tr_second": "second_order",
    "convex_ls": "f_gap",
    "strongly_convex_ls": "f_gap",
    "stoch_ls": "grad_norm",
}

# h_eps(alpha) for the measure kinds where it is a fixed formula
H_KIND = {
    "tr_first": "alpha2",
    "ls_first": "alpha_eps2",
    "cubic": "alpha_eps1.5",
    "tr_second": "alpha3",
    "stoch_ls": "alpha_eps2",
}


def h_value(kind: str, alpha: float, eps: float) -> float:
    if kind == "alpha2":
        return alpha * alpha
    if kind == "alpha_eps2":
        return alpha * eps * eps
    if kind == "alpha_eps1.5":
        return alpha * eps ** 1.5
    if kind == "alpha3":
        return alpha ** 3
    raise InvalidArgumentError(f"unknown h kind {kind!r}")


@dataclass(frozen=True)
class ProgressMeasure:
    kind: str
    nu: float
    f_star: float = 0.0
    eps: Optional[float] = None
    L: Optional[float] = None
    eta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in MEASURE_KINDS:
            raise InvalidArgumentError(f"unknown progress measure {self.kind!r}")
        if not 0 < self.nu < 1:
            raise InvalidArgumentError("nu must lie in (0, 1)")
        if self.kind in ("convex_ls", "strongly_convex_ls") and not self.eps:
            raise InvalidArgumentError(f"{self.kind} needs eps")
        if self.kind == "stoch_ls" and (self.L is None or self.eta is None):
            raise InvalidArgumentError("stoch_ls needs L and eta")

    @property
    def stopping_rule(self) -> StoppingRule:
        kind = STOP_KIND[self.kind]
        if self.eps is None:
            raise ConfigurationError("measure has no eps; cannot derive a stopping rule")
        return StoppingRule(kind, self.eps, self.f_star if kind == "f_gap" else None)


def _need(snap, name):
    v = snap.get(name) if isinstance(snap, dict) else getattr(snap, name, None)
    if v is None:
        raise ConfigurationError(f"snapshot lacks {name!r}")
    return float(v)


def phi_value(m: ProgressMeasure, snapshot) -> float:
    """Evaluate Phi_k for one state snapshot (record or dict with f,
    grad_norm, alpha and, for stoch_ls, delta)."""
    nu = m.nu
    a = _need(snapshot, "alpha")
    f = _need(snapshot, "f")
    gap = f - m.f_star
    k = m.kind
    if k == "tr_first":
        return nu * gap + (1 - nu) * a * a
    if k == "tr_second":
        return nu * gap + (1 - nu) * a ** 3
    if k == "ls_first":
        g = _need(snapshot, "grad_norm")
        return nu * gap + (1 - nu) * a * g * g
    if k == "cubic":
        g = _need(snapshot, "grad_norm")
        return nu * gap + (1 - nu) * a * g ** 1.5
    if k == "stoch_ls":
        g = _need(snapshot, "grad_norm")
        d = _need(snapshot, "delta")
        return nu * gap + (1 - nu) * (a / m.L ** 2 * g * g + m.eta * d * d)
    if gap <= 0:
        raise InvalidArgumentError(f"{k} needs f > f*, got gap {gap!r}")
    if k == "convex_ls":
        return nu * (1.0 / m.eps - 1.0 / gap) + (1 - nu) * a
    # strongly_convex_ls
    return nu * (math.log(1.0 / m.eps) - math.log(1.0 / gap)) + (1 - nu) * math.log(a)


def nu_coefficient(kind: str, gamma: float, L=None, alpha_bar=None, beta=None) -> float:
    """Right-hand coefficient R in nu * eta * c >= (1 - nu) * R."""
    if kind == "tr_first":
        return gamma ** 2 - gamma ** -2
    if kind == "ls_first":
        if None in (L, alpha_bar, beta):
            raise InvalidArgumentError("ls_first needs L, alpha_bar and beta")
        return (L * alpha_bar * beta + 1) ** 2 * gamma - 1 / gamma
    if kind == "cubic":
        return gamma + 1 - 1 / gamma
    if kind == "tr_second":
        return gamma ** 3 - gamma ** -3
    raise InvalidArgumentError(f"no nu inequality for {kind!r}")


def choose_nu(kind: str, eta: float, gamma: float, c: float, L=None, alpha_bar=None, beta=None) -> float:
    """Smallest nu with nu * eta * c >= (1 - nu) * R for the method kind."""
    if min(eta, gamma, c) <= 0:
        raise InvalidArgumentError("constants must be positive")
    R = nu_coefficient(kind, gamma, L, alpha_bar, beta)
    return R / (eta * c + R)


def theta_for(kind: str, nu: float, gamma: float) -> float:
    """Per-iteration progress constant Theta for the deterministic kinds."""
    if kind == "tr_first":
        return (1 - nu) * (1 - gamma ** -2)
    if kind in ("ls_first", "cubic"):
        return (1 - nu) * (1 - 1 / gamma)
    if kind == "tr_second":
        return (1 - nu) * (1 - gamma ** -3)
    raise InvalidArgumentError(f"Theta for {kind!r} is calibrated, not derived")


def tr_decrease_constant(tau: float, beta_h: float) -> float:
    """c2 such that successful TR iterations reduce f by at least
    eta * c2 * alpha^2 (Cauchy decrease plus alpha <= tau ||grad f||)."""
    return (1.0 / (2.0 * tau)) * min(1.0, 1.0 / (beta_h * tau))


def ls_stepsize_floor(gamma: float, eta: float, kappa1: float, kappa2: float, L: float) -> float:
    """Lower bound on every stepsize parameter of Armijo line search."""
    return 2.0 * (1.0 - eta) * kappa1 / (gamma * L * kappa2 ** 2)


def chi(g, H) -> float:
    """Second-order stationarity measure max(||g||, -lambda_min(H))."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[0] != H.shape[1] or not np.allclose(H, H.T, rtol=1e-12, atol=1e-12):
        raise InvalidArgumentError("chi needs a symmetric matrix")
    lam_min = float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])
    return max(float(np.linalg.norm(g)), -lam_min)


def _snapshots(trace):
    if isinstance(trace, RunResult):
        return trace.snapshots
    return list(trace)


def stopping_time(trace, rule: StoppingRule) -> Optional[int]:
    """First qualifying index, or ``None`` if the trace never qualifies.

    For ``next_grad_norm`` index k qualifies when the state after iteration
    k does; a trace already stationary at k = 0 gives T = 0.
    """
    snaps = _snapshots(trace)
    if not snaps:
        return None
    if rule.kind == "next_grad_norm":
        if rule.met_at(snaps[0]):
            return 0
        for k in range(len(snaps) - 1):
            if rule.met_at(snaps[k + 1]):
                return k
        return None
    for k, s in enumerate(snaps):
        if rule.met_at(s):
            return k
    return None


def te_bound(phi0: float, Theta: float, h_at_floor: float) -> float:
    """Worst-case bound T_eps <= Phi_0 / (Theta h(alpha_floor))."""
    if phi0 == 0:
        return 0.0
    if min(phi0, Theta, h_at_floor) <= 0:
        raise InvalidArgumentError("te_bound inputs must be positive")
    return phi0 / (Theta * h_at_floor)


def expected_te_bound(phi0: float, Theta: float, h_at_floor: float, delta: float) -> float:
    """Expected stopping-time bound (1-delta)/(1-2 delta) Phi_0/(Theta h) + 1."""
    if not 0 <= delta < 0.5:
        raise InvalidArgumentError("delta must lie in [0, 1/2)")
    return (1 - delta) / (1 - 2 * delta) * te_bound(phi0, Theta, h_at_floor) + 1.0


@dataclass
class AnalysisConfig:
    """Constants used by the verification checks.

    ``c2``/``c3`` are formula-derived; ``c1``, ``c4``, ``zeta`` and (for
    stochastic kinds) ``theta`` come from calibration runs.
    """

    gamma: float
    theta: float
    alpha_floor: float
    tol: float = 1e-10
    c1: Optional[float] = None
    c2: Optional[float] = None
    c3: Optional[float] = None
    c4: Optional[float] = None
    zeta: Optional[float] = None

    def __post_init__(self):
        if min(self.gamma - 1, self.theta, self.alpha_floor) <= 0:
            raise InvalidArgumentError("analysis constants must be positive (gamma > 1)")


@dataclass
class ConditionReport:
    verdict: bool
    stop_index: Optional[int]
    part1: list
    part2: list
    decrements: list
    min_alpha: Optional[float]
    violations: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "verdict": bool(self.verdict),
            "stop_index": self.stop_index,
            "min_alpha": self.min_alpha,
            "violations": self.violations,
            "constants": self.constants,
        }


def check_condition1(trace, measure: ProgressMeasure, cfg: AnalysisConfig,
                     h_kind: Optional[str] = None) -> ConditionReport:
    """Check both parts of the deterministic progress condition on a trace.

    Part 1: alpha_k <= gamma * alpha_floor forces W_k = +1, and no alpha_k
    falls below alpha_floor.  Part 2: Phi_k - Phi_{k+1} >= Theta h(alpha_k)
    for every k before the stopping time.  Violations are collected, never
    raised.
    """
    snaps = _snapshots(trace)
    h_kind = h_kind or H_KIND.get(measure.kind)
    rule = measure.stopping_rule
    T = stopping_time(snaps, rule)
    K = (len(snaps) - 1) if T is None else T
    eps = measure.eps
    part1, part2, dec, violations = [], [], [], []
    if K == 0:
        return ConditionReport(True, T, [], [], [], float(snaps[0].alpha), [],
                               _constants(cfg, measure))
    phis = [phi_value(measure, snaps[k]) for k in range(K + 1)]
    for k in range(K):
        a = snaps[k].alpha
        ok1 = not (a <= cfg.gamma * cfg.alpha_floor) or snaps[k].W == 1
        part1.append(ok1)
        if not ok1:
            violations.append({"k": k, "part": 1, "alpha": a, "W": snaps[k].W})
        d = phis[k] - phis[k + 1]
        need = cfg.theta * h_value(h_kind, a, eps) if h_kind else 0.0
        dec.append(d)
        ok2 = d >= need - cfg.tol
        part2.append(ok2)
        if not ok2:
            violations.append({"k": k, "part": 2, "decrement": d, "required": need})
    min_alpha = min(s.alpha for s in snaps[: K + 1])
    if min_alpha < cfg.alpha_floor:
        violations.append({"k": None, "part": 1, "min_alpha": min_alpha,
                           "alpha_floor": cfg.alpha_floor})
    return ConditionReport(not violations, T, part1, part2, dec, min_alpha, violations,
                           _constants(cfg, measure))


def _constants(cfg: AnalysisConfig, measure: ProgressMeasure) -> dict:
    out = {k: v for k, v in asdict(cfg).items() if v is not None}
    out["nu"] = measure.nu
    out["kind"] = measure.kind
    return out


# ---------------------------------------------------------------------------
# calibration of constants the theory asserts but does not give in closed form


def calibrate_alpha_floor(trace, gamma: float, stop_index: Optional[int] = None,
                          shrink: float = 1e-9) -> float:
    """Empirical alpha_floor: strictly below both the smallest stepsize
    parameter seen and (smallest unsuccessful alpha) / gamma."""
    snaps = _snapshots(trace)
    K = (len(snaps) - 1) if stop_index is None else stop_index
    alphas = [s.alpha for s in snaps[: K + 1]]
    fails = [s.alpha for s in snaps[:K] if s.W == -1]
    floor = min(alphas)
    if fails:
        floor = min(floor, min(fails) / gamma)
    return floor * (1 - shrink)


def calibrate_c4(trace, eta: float, stop_index: Optional[int] = None) -> float:
    """Smallest observed fred / (eta alpha_k ||grad f(x_{k+1})||^{3/2}) over
    successful cubic iterations."""
    recs = trace.records if isinstance(trace, RunResult) else list(trace)
    if stop_index is not None:
        recs = recs[: stop_index + 1]
    vals = [
        r.fred / (eta * r.alpha * r.next_grad_norm ** 1.5)
        for r in recs
        if r.W == 1 and r.next_grad_norm and r.next_grad_norm > 0
    ]
    if not vals:
        raise InvalidArgumentError("no successful iterations to calibrate c4 from")
    return min(vals)


# ---------------------------------------------------------------------------
# inequalities derived for particular methods, checked iteration by iteration


def check_tr_success_decrease(trace, eta: float, c2: float, tol: float = 1e-10) -> list:
    return [
        r.k for r in _records(trace)
        if r.W == 1 and r.fred is not None and r.fred < eta * c2 * r.alpha ** 2 - tol
    ]


def check_ls_floor(trace, floor: float, tol: float = 1e-12) -> list:
    return [s.k for s in _snapshots(trace) if s.alpha < floor - tol]


def check_gradient_growth(trace, L: float, beta: float, tol: float = 1e-10) -> list:
    return [
        r.k for r in _records(trace)
        if r.W == 1 and r.next_grad_norm > (L * r.alpha * beta + 1) * r.grad_norm + tol
    ]


def check_convex_progress(trace, f_star: float, eta: float, c3: float, alpha_low: float,
                          D: float, tol: float = 1e-10) -> list:
    """Reciprocal optimality gap grows by eta c3 alpha_low / D^2 on every
    successful iteration."""
    snaps = _snapshots(trace)
    bad = []
    for k in range(len(snaps) - 1):
        if snaps[k].W != 1:
            continue
        g0, g1 = snaps[k].f - f_star, snaps[k + 1].f - f_star
        if g1 <= 0:
            continue
        if 1.0 / g1 - 1.0 / g0 < eta * c3 * alpha_low / D ** 2 - tol:
            bad.append(k)
    return bad


def check_strongly_convex_progress(trace, f_star: float, eta: float, c3: float, c: float,
                                   tol: float = 1e-12) -> list:
    """Geometric gap contraction by (1 - eta c3 c alpha_k) on successful
    iterations, with the contraction factor in [0, 1)."""
    snaps = _snapshots(trace)
    bad = []
    for k in range(len(snaps) - 1):
        if snaps[k].W != 1:
            continue
        rate = eta * c3 * c * snaps[k].alpha
        g0, g1 = snaps[k].f - f_star, snaps[k + 1].f - f_star
        if rate > 1 or g1 > (1 - rate) * g0 + tol:
            bad.append(k)
    return bad


def _records(trace):
    return trace.records if isinstance(trace, RunResult) else [r for r in trace if r.W is not None]


# ---------------------------------------------------------------------------
# stochastic: checkpoint-replay estimator of the conditional quantities


@dataclass
class ReplayReport:
    p_hat: float
    mean_decrement: float
    std_decrement: float
    h_ref: float
    M: int
    decrements: np.ndarray = field(repr=False)

    @property
    def binomial_stderr(self) -> float:
        return math.sqrt(self.p_hat * (1 - self.p_hat) / self.M)

    @property
    def decrement_stderr(self) -> float:
        return self.std_decrement / math.sqrt(self.M)


def one_step_conditional_check(state, method: str, oracle, config, measure: ProgressMeasure,
                               M: int = 1000, seed: int = 0, V=None,
                               h_kind: Optional[str] = None) -> ReplayReport:
    """Replay one iteration ``M`` times from a frozen state, each with an
    independent oracle stream, and report the success frequency and the
    sample mean of Phi_k - Phi_{k+1} (evaluated with exact f and gradient
    of the oracle's underlying problem).  Holding the state fixed is what
    conditions on the history up to iteration k.
    """
    from .problems import derive_seed
    from .stoch_methods import replay_iteration

    if M < 100:
        raise InvalidArgumentError("replay needs M >= 100")
    p = oracle.problem
    h_kind = h_kind or H_KIND.get(measure.kind, "alpha2")
    snap0 = _true_snapshot(p, state)
    phi0 = phi_value(measure, snap0)
    wins = 0
    dec = np.empty(M)
    for i in range(M):
        o = oracle.clone(derive_seed(seed, i))
        new, rec = replay_iteration(method, state, o, config, V)
        wins += rec.W == 1
        dec[i] = phi0 - phi_value(measure, _true_snapshot(p, new))
    eps = measure.eps if measure.eps is not None else 1.0
    return ReplayReport(
        p_hat=wins / M,
        mean_decrement=float(dec.mean()),
        std_decrement=float(dec.std(ddof=1)),
        h_ref=h_value(h_kind, state.alpha, eps),
        M=M,
        decrements=dec,
    )


def _true_snapshot(p, state):
    return {
        "f": p.f(state.x),
        "grad_norm": float(np.linalg.norm(p.gradient(state.x))),
        "alpha": state.alpha,
        "delta": getattr(state, "delta", None),
    }


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    residual: float
    r_squared: float


def complexity_fit(points: Sequence[tuple], mode: str = "power") -> FitResult:
    """Least-squares fit of stopping times against log(1/eps).

    ``power``: log T = slope * log(1/eps) + b (slope estimates the exponent).
    ``log``:   T = slope * log(1/eps) + b (linear growth in log(1/eps)).
    """
    pts = [(float(e), float(t)) for e, t in points]
    if len({e for e, _ in pts}) < 2:
        raise InvalidArgumentError("need at least two distinct eps values")
    if mode not in ("power", "log"):
        raise InvalidArgumentError(f"unknown fit mode {mode!r}")
    x = np.array([math.log(1.0 / e) for e, _ in pts])
    if mode == "power":
        if any(t <= 0 for _, t in pts):
            raise InvalidArgumentError("power-law fit needs positive stopping times")
        y = np.log([t for _, t in pts])
    else:
        y = np.array([t for _, t in pts])
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sum((y - (slope * x + intercept)) ** 2))
    tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - resid / tot if tot > 0 else 1.0
    return FitResult(float(slope), float(intercept), resid, r2)


# ---------------------------------------------------------------------------
# one-call verification of a deterministic run

DET_MEASURE = {"tr": "tr_first", "ls": "ls_first", "cubic": "cubic"}


@dataclass
class DetVerification:
    report: ConditionReport
    measure: ProgressMeasure
    theta: float
    c: float
    stop_index: Optional[int]
    bound: Optional[float]
    phis: list

    @property
    def bound_holds(self) -> bool:
        return self.stop_index is not None and self.bound is not None and self.stop_index <= self.bound

    def to_json(self) -> dict:
        out = self.report.to_json()
        out.update(theta=self.theta, c=self.c, te_bound=self.bound,
                   bound_holds=self.bound_holds)
        return out


def verify_deterministic(method: str, problem, config, trace, eps: float) -> DetVerification:
    """Build nu, Theta and the floor for ``method`` and check the progress
    condition and the worst-case stopping-time bound on ``trace``.

    The decrease constant is c2 = tr_decrease_constant(tau, L) for trust
    region (L bounds the Hessian), kappa1 = 1 for identity-preconditioned
    line search, and the calibrated c4 for cubic regularization.
    """
    if method not in DET_MEASURE:
        raise InvalidArgumentError(f"no deterministic measure for {method!r}")
    kind = DET_MEASURE[method]
    L = problem.lipschitz
    T = trace.stop_index
    if method == "tr":
        c = tr_decrease_constant(config.tau, L)
        nu = choose_nu(kind, config.eta, config.gamma, c)
    elif method == "ls":
        c = 1.0
        nu = choose_nu(kind, config.eta, config.gamma, c, L=L, alpha_bar=config.alpha_bar,
                       beta=config.beta_dir)
    else:
        c = calibrate_c4(trace, config.eta, T)
        nu = choose_nu(kind, config.eta, config.gamma, c)
    theta = theta_for(kind, nu, config.gamma)
    f_star = problem.f_star if problem.f_star is not None else 0.0
    measure = ProgressMeasure(kind, nu, f_star, eps)
    floor = calibrate_alpha_floor(trace, config.gamma, T)
    report = check_condition1(trace, measure, AnalysisConfig(config.gamma, theta, floor))
    snaps = trace.snapshots
    phis = [phi_value(measure, s) for s in snaps]
    bound = None
    if T is not None:
        min_alpha = min(s.alpha for s in snaps[: T + 1])
        bound = te_bound(phis[0], theta, h_value(H_KIND[kind], min_alpha, eps))
    return DetVerification(report, measure, theta, c, T, bound, phis)
