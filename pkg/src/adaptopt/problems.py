"""Test objectives and stochastic oracles.

Deterministic problems expose exact value/gradient/Hessian evaluators plus
whatever structural constants are known (Lipschitz constant of the
gradient, optimal value, convexity class).  Oracles wrap a problem and
return noisy or sub-sampled estimates; each owns a private RNG stream.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, InvalidArgumentError, InvalidProblemError

Vector = np.ndarray


@dataclass(frozen=True)
class DeterministicProblem:
    """Smooth objective with exact evaluators.

    ``convexity`` is one of ``"nonconvex"``, ``"convex"`` or
    ``"strongly_convex"``; in the last case ``strong_convexity`` holds the
    modulus c.  ``box`` is an optional ``(lower, upper)`` pair bounding the
    region on which ``lipschitz`` is valid (``None`` means global).
    """

    n: int
    fun: Callable[[Vector], float]
    grad: Callable[[Vector], Vector]
    hess: Optional[Callable[[Vector], np.ndarray]] = None
    lipschitz: Optional[float] = None
    f_star: Optional[float] = None
    convexity: str = "nonconvex"
    strong_convexity: Optional[float] = None
    diameter: Optional[float] = None
    box: Optional[tuple] = None
    name: str = "problem"

    def f(self, x: Vector) -> float:
        return float(self.fun(np.asarray(x, dtype=float)))

    def gradient(self, x: Vector) -> Vector:
        return np.asarray(self.grad(np.asarray(x, dtype=float)), dtype=float)

    def hessian(self, x: Vector) -> np.ndarray:
        if self.hess is None:
            raise ConfigurationError(f"{self.name}: no Hessian evaluator")
        return np.asarray(self.hess(np.asarray(x, dtype=float)), dtype=float)

    @property
    def has_hessian(self) -> bool:
        return self.hess is not None


def quadratic_problem(diag, shift) -> DeterministicProblem:
    """f(x) = 1/2 sum_i diag_i (x_i - shift_i)^2."""
    d = np.asarray(diag, dtype=float).ravel()
    c = np.asarray(shift, dtype=float).ravel()
    if d.size == 0 or d.shape != c.shape:
        raise InvalidProblemError("diag and shift must be non-empty and of equal length")
    if not np.all(np.isfinite(d)) or not np.all(np.isfinite(c)):
        raise InvalidProblemError("quadratic data must be finite")
    if np.any(d <= 0):
        raise InvalidProblemError("quadratic diagonal entries must be positive")

    def fun(x):
        r = x - c
        return 0.5 * float(np.dot(d * r, r))

    def grad(x):
        return d * (x - c)

    def hess(x):
        return np.diag(d)

    return DeterministicProblem(
        n=d.size,
        fun=fun,
        grad=grad,
        hess=hess,
        lipschitz=float(d.max()),
        f_star=0.0,
        convexity="strongly_convex",
        strong_convexity=float(d.min()),
        name="quadratic",
    )


def quadratic_level_set_diameter(p: DeterministicProblem, x0: Vector) -> float:
    """Radius D of the level set {f <= f(x0)} around the minimizer of a
    strongly convex problem: ||x - x*|| <= sqrt(2 (f(x0) - f*) / c)."""
    if p.strong_convexity is None or p.f_star is None:
        raise InvalidArgumentError("needs a strongly convex problem with known f*")
    return float(np.sqrt(2.0 * (p.f(x0) - p.f_star) / p.strong_convexity))


def rosenbrock_problem(n: int, box_half_width: float = 2.0) -> DeterministicProblem:
    """Chained Rosenbrock, sum_i 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2.

    The declared Lipschitz constant is a Gershgorin bound on the Hessian
    over the box [-b, b]^n with b = ``box_half_width``.
    """
    if n < 2:
        raise InvalidProblemError("Rosenbrock needs n >= 2")

    def fun(x):
        a = x[1:] - x[:-1] ** 2
        b = 1.0 - x[:-1]
        return float(np.sum(100.0 * a * a + b * b))

    def grad(x):
        a = x[1:] - x[:-1] ** 2
        g = np.zeros_like(x)
        g[:-1] = -400.0 * x[:-1] * a - 2.0 * (1.0 - x[:-1])
        g[1:] += 200.0 * a
        return g

    def hess(x):
        H = np.zeros((n, n))
        idx = np.arange(n - 1)
        H[idx, idx] = 1200.0 * x[:-1] ** 2 - 400.0 * x[1:] + 2.0
        H[idx + 1, idx + 1] += 200.0
        H[idx, idx + 1] = -400.0 * x[:-1]
        H[idx + 1, idx] = -400.0 * x[:-1]
        return H

    b = float(box_half_width)
    lip = 1200.0 * b * b + 1200.0 * b + 202.0
    return DeterministicProblem(
        n=n,
        fun=fun,
        grad=grad,
        hess=hess,
        lipschitz=lip,
        f_star=0.0,
        convexity="nonconvex",
        box=(-b * np.ones(n), b * np.ones(n)),
        name=f"rosenbrock{n}",
    )


def double_well_problem(n: int = 2) -> DeterministicProblem:
    """Nonconvex instance with a degenerate minimizer in the first coordinate:
    f(x) = x_0^4 / 4 + sum_{i>=1} (x_i^4 / 4 - x_i^2 / 2) + (n - 1) / 4.

    The quartic direction has zero curvature at the solution, which separates
    first-order from second-order step behaviour.  f* = 0 at x = (0, +-1, ...).
    """
    if n < 2:
        raise InvalidProblemError("double well needs n >= 2")

    def fun(x):
        return float(x[0] ** 4 / 4 + np.sum(x[1:] ** 4 / 4 - x[1:] ** 2 / 2) + (n - 1) / 4)

    def grad(x):
        g = x ** 3
        g[1:] -= x[1:]
        return g

    def hess(x):
        h = 3.0 * x ** 2
        h[1:] -= 1.0
        return np.diag(h)

    b = 2.0
    return DeterministicProblem(
        n=n,
        fun=fun,
        grad=grad,
        hess=hess,
        lipschitz=3.0 * b * b,
        f_star=0.0,
        convexity="nonconvex",
        box=(-b * np.ones(n), b * np.ones(n)),
        name=f"double_well{n}",
    )


# ---------------------------------------------------------------------------
# Finite-sum logistic regression


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    X_test: Optional[np.ndarray] = None
    y_test: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y).astype(np.int64).ravel()
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise InvalidProblemError("dataset must be a non-empty N x d matrix")
        if self.X.shape[0] != self.y.size:
            raise InvalidProblemError("feature/label count mismatch")
        if not np.all(np.isin(self.y, (0, 1))):
            raise InvalidProblemError("labels must be binary {0, 1}")
        if not np.all(np.isfinite(self.X)):
            raise InvalidProblemError("features must be finite")
        if self.X_test is not None:
            self.X_test = np.asarray(self.X_test, dtype=float)
            self.y_test = np.asarray(self.y_test).astype(np.int64).ravel()

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass
class FiniteSumProblem:
    """Regularized logistic regression, (1/N) sum_i phi(x, y_i) + lam/2 ||x||^2.

    Labels {0, 1} are mapped to z in {-1, +1}; when ``bias`` is true a
    constant-one column is appended so the last coordinate of x is the
    intercept.  The regularizer covers every coordinate, so the problem is
    lam-strongly convex.
    """

    data: Dataset
    lam: float = 0.0
    bias: bool = True
    Xa: np.ndarray = field(init=False, repr=False)
    z: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidProblemError("regularization weight must be nonnegative")
        X = self.data.X
        self.Xa = np.hstack([X, np.ones((X.shape[0], 1))]) if self.bias else X
        self.z = 2.0 * self.data.y - 1.0

    @property
    def N(self) -> int:
        return self.Xa.shape[0]

    @property
    def n(self) -> int:
        return self.Xa.shape[1]

    def _augment(self, X):
        X = np.asarray(X, dtype=float)
        return np.hstack([X, np.ones((X.shape[0], 1))]) if self.bias else X

    def _eval(self, x, rows, hessian=False):
        A = self.Xa[rows]
        z = self.z[rows]
        margins = z * (A @ x)
        f = float(np.mean(np.logaddexp(0.0, -margins))) + 0.5 * self.lam * float(x @ x)
        coef = -z * expit(-margins)
        g = A.T @ coef / len(rows) + self.lam * x
        H = None
        if hessian:
            s = expit(margins)
            w = s * (1.0 - s)
            H = (A.T * w) @ A / len(rows) + self.lam * np.eye(self.n)
        return f, g, H

    def full_eval(self, x, hessian=False):
        return self._eval(np.asarray(x, dtype=float), np.arange(self.N), hessian)

    def f(self, x) -> float:
        return self.full_eval(x)[0]

    def gradient(self, x) -> Vector:
        return self.full_eval(x)[1]

    def hessian(self, x) -> np.ndarray:
        return self.full_eval(x, hessian=True)[2]

    @property
    def lipschitz(self) -> float:
        smax = np.linalg.norm(self.Xa, 2)
        return float(smax * smax / (4.0 * self.N) + self.lam)

    def accuracy(self, x, X=None, y=None) -> float:
        """Fraction classified correctly; positive iff sigmoid score >= 1/2."""
        if X is None:
            A, labels = self.Xa, self.data.y
        else:
            A, labels = self._augment(X), np.asarray(y).ravel()
        pred = (A @ np.asarray(x, dtype=float)) >= 0.0
        return float(np.mean(pred == (labels == 1)))

    def test_accuracy(self, x) -> float:
        if self.data.X_test is None:
            return self.accuracy(x)
        return self.accuracy(x, self.data.X_test, self.data.y_test)

    def as_deterministic(self) -> DeterministicProblem:
        return DeterministicProblem(
            n=self.n,
            fun=self.f,
            grad=self.gradient,
            hess=self.hessian,
            lipschitz=self.lipschitz,
            f_star=None,
            convexity="strongly_convex" if self.lam > 0 else "convex",
            strong_convexity=self.lam if self.lam > 0 else None,
            name="logistic",
        )


def logistic_problem(data: Dataset, lam: float, bias: bool = True) -> FiniteSumProblem:
    if data is None or data.N == 0:
        raise InvalidProblemError("empty dataset")
    return FiniteSumProblem(data, float(lam), bias)


def sample_eval(p: FiniteSumProblem, x, batch, hessian=False):
    """Mini-batch estimates averaged over the index multiset ``batch``."""
    rows = np.asarray(batch, dtype=np.int64).ravel()
    if rows.size == 0:
        raise InvalidArgumentError("batch must be non-empty")
    if rows.min() < 0 or rows.max() >= p.N:
        raise IndexError(f"batch index out of range [0, {p.N})")
    return p._eval(np.asarray(x, dtype=float), rows, hessian)


# ---------------------------------------------------------------------------
# Oracles


class StochasticOracle:
    """Common interface for estimate-producing oracles.

    ``estimate`` returns (f, g, H-or-None) averaged over a batch of ``n``
    samples; ``pair`` returns function estimates at two points sharing one
    batch size.  ``variances`` is the per-sample (V_f, V_g, V_H) triple when
    it is known exactly, else ``None``.
    """

    problem: DeterministicProblem
    seed: int

    def __init__(self, seed: int):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    @property
    def n(self) -> int:
        return self.problem.n

    def variances(self):
        return None

    def estimate(self, x, n: int, hessian: bool = False):
        raise NotImplementedError

    def pair(self, x, xs, n: int, independent: bool = False):
        raise NotImplementedError

    def draw(self, x):
        """One single-sample (f, g) draw, used for pilot variance estimates."""
        f, g, _ = self.estimate(x, 1)
        return f, g

    def clone(self, seed: int) -> "StochasticOracle":
        raise NotImplementedError


class NoisyOracle(StochasticOracle):
    """Exact problem values plus independent zero-mean Gaussian noise.

    A batch of size n is realised by drawing the batch mean directly, i.e.
    noise with standard deviation sigma / sqrt(n); this has exactly the law
    of the average of n i.i.d. single-sample draws and costs O(1).
    Noise on the Hessian is a symmetric matrix with i.i.d. N(0, sigma_h^2)
    entries on and above the diagonal.
    """

    def __init__(self, problem: DeterministicProblem, sigma_f=0.0, sigma_g=0.0,
                 sigma_h=0.0, seed: int = 0):
        if min(sigma_f, sigma_g, sigma_h) < 0:
            raise InvalidArgumentError("noise standard deviations must be nonnegative")
        super().__init__(seed)
        self.problem = problem
        self.sigma_f = float(sigma_f)
        self.sigma_g = float(sigma_g)
        self.sigma_h = float(sigma_h)

    def variances(self):
        n = self.problem.n
        return (self.sigma_f ** 2, n * self.sigma_g ** 2, n * n * self.sigma_h ** 2)

    @property
    def V_g(self) -> float:
        return self.variances()[1]

    def _f(self, x, n):
        f = self.problem.f(x)
        if self.sigma_f == 0.0:
            return f
        return f + self.sigma_f / np.sqrt(n) * self.rng.standard_normal()

    def estimate(self, x, n: int, hessian: bool = False):
        n = int(n)
        if n < 1:
            raise InvalidArgumentError("batch size must be >= 1")
        f = self._f(x, n)
        g = self.problem.gradient(x)
        if self.sigma_g > 0.0:
            g = g + self.sigma_g / np.sqrt(n) * self.rng.standard_normal(g.shape)
        H = None
        if hessian:
            H = self.problem.hessian(x)
            if self.sigma_h > 0.0:
                E = np.triu(self.rng.standard_normal(H.shape))
                E = E + np.triu(E, 1).T
                H = H + self.sigma_h / np.sqrt(n) * E
        return f, g, H

    def pair(self, x, xs, n: int, independent: bool = False):
        # additive noise has no sample identity, so the two estimates are
        # independent whether or not the batch is nominally shared
        return self._f(x, n), self._f(xs, n)

    def clone(self, seed: int) -> "NoisyOracle":
        return NoisyOracle(self.problem, self.sigma_f, self.sigma_g, self.sigma_h, seed)


class FiniteSumOracle(StochasticOracle):
    """Mini-batch oracle for a finite-sum problem; sampling with replacement."""

    def __init__(self, fs: FiniteSumProblem, seed: int = 0):
        super().__init__(seed)
        self.fs = fs
        self.problem = fs.as_deterministic()

    def _batch(self, n):
        return self.rng.integers(0, self.fs.N, size=int(n))

    def estimate(self, x, n: int, hessian: bool = False):
        if int(n) < 1:
            raise InvalidArgumentError("batch size must be >= 1")
        return sample_eval(self.fs, x, self._batch(n), hessian)

    def pair(self, x, xs, n: int, independent: bool = False):
        b0 = self._batch(n)
        bs = self._batch(n) if independent else b0
        return sample_eval(self.fs, x, b0)[0], sample_eval(self.fs, xs, bs)[0]

    def clone(self, seed: int) -> "FiniteSumOracle":
        return FiniteSumOracle(self.fs, seed)


def noisy_oracle(p: DeterministicProblem, sigma_f: float, sigma_g: float, seed: int,
                 sigma_h: float = 0.0) -> NoisyOracle:
    return NoisyOracle(p, sigma_f, sigma_g, sigma_h, seed)


def derive_seed(base_seed: int, index: int) -> int:
    """Independent child seed for replication ``index`` of ``base_seed``."""
    ss = np.random.SeedSequence([int(base_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def fd_gradient_check(p, x, h: Optional[float] = None) -> float:
    """Max coordinate error of central differences against the analytic
    gradient, relative to max(1, ||grad f(x)||)."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-5 * max(1.0, float(np.max(np.abs(x))))
    if h <= 0:
        raise InvalidArgumentError("finite-difference step must be positive")
    g = p.gradient(x)
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd[i] = (p.f(x + e) - p.f(x - e)) / (2.0 * h)
    return float(np.max(np.abs(fd - g)) / max(1.0, float(np.linalg.norm(g))))
