"""Stopping rules: which quantity defines the stopping time T_eps."""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError, InvalidArgumentError

KINDS = ("grad_norm", "next_grad_norm", "second_order", "f_gap")


@dataclass(frozen=True)
class StoppingRule:
    """``grad_norm``: ||grad f(x_k)|| <= eps.  ``next_grad_norm``: the
    gradient at x_{k+1} is checked (cubic regularization).  ``second_order``:
    chi_k <= eps.  ``f_gap``: f(x_k) - f* <= eps."""

    kind: str
    eps: float
    f_star: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown stopping rule {self.kind!r}")
        if not self.eps > 0:
            raise InvalidArgumentError("stopping tolerance must be positive")
        if self.kind == "f_gap" and self.f_star is None:
            raise ConfigurationError("f_gap stopping needs f_star")

    def met_at(self, rec) -> bool:
        """Test a state snapshot (start-of-iteration quantities)."""
        if self.kind in ("grad_norm", "next_grad_norm"):
            val = rec.grad_norm
        elif self.kind == "second_order":
            val = rec.chi
        else:
            val = None if rec.f is None else rec.f - self.f_star
        if val is None:
            raise ConfigurationError(f"snapshot lacks the field needed by {self.kind!r}")
        return val <= self.eps

    def met_after(self, rec) -> bool:
        """Test the outcome of iteration k (only ``next_grad_norm``)."""
        if rec.next_grad_norm is None:
            raise ConfigurationError("record lacks next_grad_norm")
        return rec.next_grad_norm <= self.eps
