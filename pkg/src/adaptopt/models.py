"""Local models and step subproblem solvers.

The model around x_k is

    m(x_k + s) = f0 + g's + 1/2 s'Hs + sigma ||s||^3

with sigma = 0 for trust-region and line-search models and
sigma = 1 / (3 alpha) for cubic regularization.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError, InvalidArgumentError, NumericalError

MAX_CUBIC_DIM = 500


@dataclass(frozen=True)
class LocalModel:
    x: np.ndarray
    f0: float
    g: np.ndarray
    H: Optional[np.ndarray] = None
    sigma: float = 0.0

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        object.__setattr__(self, "g", g)
        if self.H is not None:
            H = np.asarray(self.H, dtype=float)
            if H.shape != (g.size, g.size):
                raise InvalidArgumentError("curvature matrix has the wrong shape")
            if not np.allclose(H, H.T, rtol=1e-12, atol=1e-12):
                raise InvalidArgumentError("curvature matrix must be symmetric")
            object.__setattr__(self, "H", 0.5 * (H + H.T))
        if self.sigma < 0:
            raise InvalidArgumentError("cubic weight must be nonnegative")

    @property
    def curvature(self) -> np.ndarray:
        if self.H is None:
            return np.zeros((self.g.size, self.g.size))
        return self.H

    def increment(self, s) -> float:
        """m(x_k + s) - m(x_k)."""
        s = np.asarray(s, dtype=float)
        val = float(self.g @ s)
        if self.H is not None:
            val += 0.5 * float(s @ (self.H @ s))
        if self.sigma:
            val += self.sigma * float(np.linalg.norm(s)) ** 3
        return val

    def value(self, s) -> float:
        return self.f0 + self.increment(s)

    def grad_at(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = self.g + self.curvature @ s
        if self.sigma:
            out = out + 3.0 * self.sigma * float(np.linalg.norm(s)) * s
        return out


@dataclass(frozen=True)
class TrialStep:
    s: np.ndarray
    mred: float
    norm: float


@dataclass(frozen=True)
class Preconditioner:
    """Symmetric positive-definite scaling matrix with eigenvalue bounds."""

    M: np.ndarray
    kappa1: float
    kappa2: float

    @classmethod
    def from_matrix(cls, M) -> "Preconditioner":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[0] != M.shape[1] or not np.allclose(M, M.T):
            raise InvalidArgumentError("preconditioner must be square and symmetric")
        ev = np.linalg.eigvalsh(M)
        if ev[0] <= 0:
            raise InvalidArgumentError("preconditioner must be positive definite")
        return cls(M, float(ev[0]), float(ev[-1]))

    @classmethod
    def identity(cls, n: int) -> "Preconditioner":
        return cls(np.eye(n), 1.0, 1.0)


def model_reduction(m: LocalModel, s) -> float:
    """m(x_k) - m(x_k + s)."""
    s = np.asarray(s, dtype=float)
    if s.shape != m.g.shape:
        raise InvalidArgumentError("step dimension does not match the model")
    return -m.increment(s)


def cauchy_decrease_bound(gnorm: float, betaH: float, alpha: float) -> float:
    """Guaranteed model decrease of the Cauchy point:
    1/2 ||g|| min(alpha, ||g|| / beta_H)."""
    return 0.5 * gnorm * min(alpha, gnorm / betaH)


def _cauchy_point(g, H, radius):
    gnorm = float(np.linalg.norm(g))
    gHg = float(g @ (H @ g))
    t = radius / gnorm
    if gHg > 0:
        t = min(t, gnorm * gnorm / gHg)
    return -t * g


def _to_boundary(z, d, radius):
    """Positive root t of ||z + t d|| = radius."""
    a = float(d @ d)
    b = 2.0 * float(z @ d)
    c = float(z @ z) - radius * radius
    disc = max(b * b - 4.0 * a * c, 0.0)
    # numerically stable form of the positive root
    if b >= 0:
        return (2.0 * -c) / (b + np.sqrt(disc)) if (b + np.sqrt(disc)) > 0 else 0.0
    return (-b + np.sqrt(disc)) / (2.0 * a)


def tr_solve(m: LocalModel, radius: float, rtol: float = 1e-10, max_iter: Optional[int] = None) -> TrialStep:
    """Truncated CG (Steihaug) on the quadratic model within ||s|| <= radius.

    The CG path starts at the Cauchy point direction and decreases the model
    monotonically; the Cauchy point itself is kept as a fallback should
    rounding make the CG iterate worse.
    """
    if m.sigma != 0:
        raise InvalidArgumentError("tr_solve needs a quadratic model (sigma = 0)")
    if radius <= 0:
        raise InvalidArgumentError("trust-region radius must be positive")
    g = m.g
    n = g.size
    gnorm = float(np.linalg.norm(g))
    if gnorm == 0.0:
        return TrialStep(np.zeros(n), 0.0, 0.0)
    H = m.curvature
    max_iter = max_iter or 2 * n + 10

    z = np.zeros(n)
    r = g.copy()
    d = -r
    tol = rtol * gnorm
    rr = float(r @ r)
    for _ in range(max_iter):
        Hd = H @ d
        dHd = float(d @ Hd)
        if dHd <= 0:
            z = z + _to_boundary(z, d, radius) * d
            break
        a = rr / dHd
        z_new = z + a * d
        if np.linalg.norm(z_new) > radius:
            z = z + _to_boundary(z, d, radius) * d
            break
        z = z_new
        r = r + a * Hd
        rr_new = float(r @ r)
        if np.sqrt(rr_new) <= tol:
            break
        d = -r + (rr_new / rr) * d
        rr = rr_new

    znorm = float(np.linalg.norm(z))
    if znorm > radius:
        z = z * (radius / znorm)
    mred = model_reduction(m, z)
    sc = _cauchy_point(g, H, radius)
    mred_c = model_reduction(m, sc)
    if mred_c > mred:
        z, mred = sc, mred_c
    return TrialStep(z, mred, float(np.linalg.norm(z)))


def ls_direction(m: LocalModel, M: Preconditioner, beta: float) -> np.ndarray:
    """Preconditioned steepest-descent direction d = -M g.

    ``beta`` caps ||d|| / ||g||; it must be at least the largest eigenvalue
    of M so the cap is never active.
    """
    if beta < M.kappa2:
        raise ConfigurationError(f"direction cap beta={beta} below kappa2={M.kappa2}")
    return -(M.M @ m.g)


def cubic_solve(m: LocalModel, alpha: Optional[float] = None) -> TrialStep:
    """Global minimizer of the cubic-regularized model.

    A global minimizer satisfies (H + lam I) s = -g with lam = 3 sigma ||s||
    and H + lam I positive semidefinite.  We diagonalize H once and solve the
    scalar secular equation ||s(lam)|| = lam / (3 sigma) by bracketing.  In the
    hard case (g orthogonal to the leftmost eigenspace) the step is completed
    along the leftmost eigenvector; of the two symmetric completions the
    lexicographically larger one is returned.
    """
    sigma = m.sigma if alpha is None else 1.0 / (3.0 * alpha)
    if sigma <= 0:
        raise InvalidArgumentError("cubic_solve needs a positive cubic weight")
    if m.H is None:
        raise ConfigurationError("cubic model needs a curvature matrix")
    n = m.g.size
    if n > MAX_CUBIC_DIM:
        raise ConfigurationError(f"dense cubic solver limited to n <= {MAX_CUBIC_DIM}")
    if alpha is not None and m.sigma != sigma:
        m = LocalModel(m.x, m.f0, m.g, m.H, sigma)
    try:
        lam_h, Q = np.linalg.eigh(m.H)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    if not np.all(np.isfinite(lam_h)):
        raise NumericalError("non-finite eigenvalues in cubic model")
    gh = Q.T @ m.g
    gnorm = float(np.linalg.norm(m.g))
    lam_min = float(lam_h[0])
    lo = max(0.0, -lam_min)
    scale = max(1.0, gnorm)

    def step_norm(lam):
        return float(np.linalg.norm(gh / (lam_h + lam)))

    def secular(lam):
        return step_norm(lam) - lam / (3.0 * sigma)

    # degenerate components of g along the leftmost eigenspace
    left = np.abs(lam_h - lam_min) <= 1e-12 * max(1.0, abs(lam_min))
    g_left = float(np.linalg.norm(gh[left]))
    hard = g_left <= 1e-14 * scale and lam_min <= 0
    if gnorm == 0.0 and lam_min >= 0:
        return TrialStep(np.zeros(n), 0.0, 0.0)

    if hard:
        lam_star = lo
        keep = ~left
        coef = np.zeros(n)
        coef[keep] = -gh[keep] / (lam_h[keep] + lam_star)
        s_part = Q @ coef
        target = lam_star / (3.0 * sigma)
        rest = target * target - float(s_part @ s_part)
        if rest >= 0 and lam_star > 0:
            u = Q[:, np.argmax(left)]
            t = np.sqrt(rest)
            cands = [s_part + t * u, s_part - t * u]
            s = max(cands, key=lambda v: tuple(np.round(v, 14)))
            return TrialStep(s, model_reduction(m, s), float(np.linalg.norm(s)))
        if lam_star == 0.0 and gnorm == 0.0:
            s = np.zeros(n)
            return TrialStep(s, 0.0, 0.0)
        # otherwise the secular equation has a root above lam_star

    # left bracket strictly inside the admissible interval (lo, inf)
    eps = 1e-14 * max(1.0, abs(lo))
    a = lo + eps
    while secular(a) <= 0:
        eps *= 0.5
        a = lo + eps
        if eps < 1e-300:
            raise NumericalError("could not bracket the cubic secular equation")
    b = max(2.0 * a, 1.0)
    while secular(b) > 0:
        b *= 2.0
        if not np.isfinite(b):
            raise NumericalError("secular equation has no finite root")
    lam = brentq(secular, a, b, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    s = Q @ (-gh / (lam_h + lam))
    # one Newton polish on the first-order condition
    s = _polish(m, s)
    return TrialStep(s, model_reduction(m, s), float(np.linalg.norm(s)))


def _polish(m: LocalModel, s):
    best = s
    best_res = float(np.linalg.norm(m.grad_at(s)))
    for _ in range(3):
        nrm = float(np.linalg.norm(best))
        if nrm == 0:
            break
        J = m.H + 3.0 * m.sigma * (nrm * np.eye(s.size) + np.outer(best, best) / nrm)
        try:
            cand = best - np.linalg.solve(J, m.grad_at(best))
        except np.linalg.LinAlgError:
            break
        res = float(np.linalg.norm(m.grad_at(cand)))
        if res >= best_res or model_reduction(m, cand) < model_reduction(m, best) - 1e-15 * max(1.0, abs(m.f0)):
            break
        best, best_res = cand, res
    return best
