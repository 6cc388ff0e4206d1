"""Exception types shared across the package."""


class AdaptOptError(Exception):
    """Base class for all package errors."""


class InvalidProblemError(AdaptOptError, ValueError):
    pass


class InvalidArgumentError(AdaptOptError, ValueError):
    pass


class ConfigurationError(AdaptOptError, ValueError):
    pass


class NumericalError(AdaptOptError, ArithmeticError):
    pass


class SolverError(AdaptOptError, RuntimeError):
    """Raised when a subproblem solver cannot produce a usable step."""


class FormatError(AdaptOptError, ValueError):
    """Malformed input file (IDX, CSV, trace)."""


class StationaryPointReached(AdaptOptError):
    """An iteration was requested at a point with an exactly zero gradient."""

    def __init__(self, x, message="gradient is exactly zero"):
        super().__init__(message)
        self.x = x


class NearStationarity(AdaptOptError):
    """The adaptive sampling loop hit its batch cap because the estimated
    gradient norm keeps shrinking; the point is a candidate stationary point."""

    def __init__(self, batch, gnorm):
        super().__init__(f"batch cap {batch} reached with |g| = {gnorm:.3e}")
        self.batch = batch
        self.gnorm = gnorm


class WorkLimitExceeded(AdaptOptError):
    def __init__(self, required, cap):
        super().__init__(f"required batch {required} exceeds cap {cap}")
        self.required = required
        self.cap = cap
