"""Adaptive deterministic framework: trust region, line search and cubic
regularization sharing one stepsize-parameter update."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, SolverError, StationaryPointReached
from .models import LocalModel, Preconditioner, cubic_solve, ls_direction, model_reduction, tr_solve
from .problems import DeterministicProblem
from .stopping import StoppingRule
from .trace import CONVERGED, MAX_ITERS, STATIONARY, RunResult, TraceRecord

METHODS = ("tr", "ls", "cubic")


@dataclass(frozen=True)
class DetConfig:
    eta: float = 0.1
    gamma: float = 2.0
    alpha_bar: float = 1.0
    alpha0: float = 1.0
    tau: float = 10.0
    beta_dir: float = 1.0
    eps: float = 1e-6
    max_iters: int = 10_000

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ConfigurationError("eta must lie in (0, 1)")
        if not self.gamma > 1:
            raise ConfigurationError("gamma must exceed 1")
        if not self.alpha_bar > 0:
            raise ConfigurationError("alpha_bar must be positive")
        if not 0 < self.alpha0 <= self.alpha_bar:
            raise ConfigurationError("alpha0 must lie in (0, alpha_bar]")
        if not self.tau > 0:
            raise ConfigurationError("tau must be positive")
        if not self.eps > 0:
            raise ConfigurationError("eps must be positive")
        if self.max_iters < 0:
            raise ConfigurationError("max_iters must be nonnegative")


@dataclass(frozen=True)
class DetState:
    k: int
    x: np.ndarray
    alpha: float
    W: Optional[int] = None


def stepsize_update(alpha: float, W: int, gamma: float, alpha_bar: float) -> float:
    if W == 1:
        return min(gamma * alpha, alpha_bar)
    return alpha / gamma


def _advance(s: DetState, step, W, c: DetConfig) -> DetState:
    x = s.x + step if W == 1 else s.x
    return DetState(s.k + 1, x, stepsize_update(s.alpha, W, c.gamma, c.alpha_bar), W)


def _chi_or_none(g, H):
    if H is None:
        return None
    from .analysis import chi

    return chi(g, H)


def det_tr_iteration(s: DetState, p: DeterministicProblem, c: DetConfig):
    """One trust-region iteration with ratio test and the auxiliary
    requirement alpha_k <= tau ||grad f(x_k)||, checked first."""
    f0 = p.f(s.x)
    g = p.gradient(s.x)
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        raise StationaryPointReached(s.x)
    H = p.hessian(s.x) if p.has_hessian else None
    rec = TraceRecord(k=s.k, x=s.x, f=f0, grad_norm=gnorm, alpha=s.alpha, chi=_chi_or_none(g, H))

    if s.alpha > c.tau * gnorm:
        rec.W = -1
        rec.next_grad_norm = gnorm
        return _advance(s, None, -1, c), rec

    m = LocalModel(s.x, f0, g, H)
    step = tr_solve(m, s.alpha)
    if step.mred <= 0.0:
        raise SolverError(f"zero model reduction at a non-stationary point (k={s.k})")
    fred = f0 - p.f(s.x + step.s)
    ratio = fred / step.mred
    W = 1 if ratio >= c.eta else -1
    rec.W, rec.mred, rec.fred, rec.ratio, rec.step_norm = W, step.mred, fred, ratio, step.norm
    new = _advance(s, step.s, W, c)
    rec.next_grad_norm = float(np.linalg.norm(p.gradient(new.x))) if W == 1 else gnorm
    return new, rec


def det_ls_iteration(s: DetState, p: DeterministicProblem, c: DetConfig, M: Optional[Preconditioner] = None):
    """One Armijo line-search iteration along d = -M grad f(x_k)."""
    M = M or Preconditioner.identity(p.n)
    f0 = p.f(s.x)
    g = p.gradient(s.x)
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        raise StationaryPointReached(s.x)
    d = ls_direction(LocalModel(s.x, f0, g), M, c.beta_dir)
    step = s.alpha * d
    fred = f0 - p.f(s.x + step)
    pred = -float(g @ step)
    W = 1 if fred >= c.eta * pred else -1
    new = _advance(s, step, W, c)
    rec = TraceRecord(
        k=s.k, x=s.x, f=f0, grad_norm=gnorm, alpha=s.alpha, W=W, mred=pred, fred=fred,
        ratio=fred / pred, step_norm=float(np.linalg.norm(step)),
    )
    rec.next_grad_norm = float(np.linalg.norm(p.gradient(new.x))) if W == 1 else gnorm
    return new, rec


def det_cubic_iteration(s: DetState, p: DeterministicProblem, c: DetConfig):
    """One cubic-regularized Newton iteration with weight 1 / (3 alpha_k)."""
    if not p.has_hessian:
        raise ConfigurationError("cubic regularization needs a Hessian evaluator")
    f0 = p.f(s.x)
    g = p.gradient(s.x)
    H = p.hessian(s.x)
    gnorm = float(np.linalg.norm(g))
    chi_k = _chi_or_none(g, H)
    if gnorm == 0.0 and chi_k == 0.0:
        raise StationaryPointReached(s.x)
    m = LocalModel(s.x, f0, g, H, 1.0 / (3.0 * s.alpha))
    step = cubic_solve(m)
    if step.mred <= 0.0:
        raise SolverError(f"zero model reduction at a non-stationary point (k={s.k})")
    fred = f0 - p.f(s.x + step.s)
    ratio = fred / step.mred
    W = 1 if ratio >= c.eta else -1
    new = _advance(s, step.s, W, c)
    rec = TraceRecord(
        k=s.k, x=s.x, f=f0, grad_norm=gnorm, alpha=s.alpha, W=W, mred=step.mred,
        fred=fred, ratio=ratio, step_norm=step.norm, chi=chi_k,
    )
    rec.next_grad_norm = float(np.linalg.norm(p.gradient(new.x))) if W == 1 else gnorm
    return new, rec


def _snapshot(p: DeterministicProblem, s: DetState, with_chi: bool) -> TraceRecord:
    g = p.gradient(s.x)
    H = p.hessian(s.x) if (with_chi and p.has_hessian) else None
    return TraceRecord(
        k=s.k, x=s.x, f=p.f(s.x), grad_norm=float(np.linalg.norm(g)), alpha=s.alpha,
        chi=_chi_or_none(g, H),
    )


def run_deterministic(method: str, p: DeterministicProblem, c: DetConfig, x0,
                      stop: Optional[StoppingRule] = None,
                      M: Optional[Preconditioner] = None) -> RunResult:
    """Run one deterministic method until the stopping rule fires, the
    gradient vanishes exactly, or ``c.max_iters`` iterations elapse."""
    if method not in METHODS:
        raise ConfigurationError(f"unknown deterministic method {method!r}")
    if stop is None:
        stop = StoppingRule("next_grad_norm" if method == "cubic" else "grad_norm", c.eps)
    if method == "ls" and M is not None and c.beta_dir < M.kappa2:
        raise ConfigurationError("beta_dir must be at least kappa2 of the preconditioner")
    step_fn = {
        "tr": lambda st: det_tr_iteration(st, p, c),
        "ls": lambda st: det_ls_iteration(st, p, c, M),
        "cubic": lambda st: det_cubic_iteration(st, p, c),
    }[method]
    with_chi = p.has_hessian and method != "ls" or stop.kind == "second_order"

    s = DetState(0, np.asarray(x0, dtype=float).copy(), c.alpha0)
    records = []
    status, T = MAX_ITERS, None
    snap = _snapshot(p, s, with_chi)
    while True:
        if stop.met_at(snap):
            status, T = CONVERGED, s.k
            break
        if s.k >= c.max_iters:
            break
        try:
            s_new, rec = step_fn(s)
        except StationaryPointReached:
            status = STATIONARY
            break
        records.append(rec)
        s = s_new
        snap = _snapshot(p, s, with_chi)
        if stop.kind == "next_grad_norm" and stop.met_after(rec):
            status, T = CONVERGED, rec.k
            break
    return RunResult(method, records, snap, status, T, info={"problem": p.name})
