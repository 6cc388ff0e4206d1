"""Per-iteration records and run results shared by all drivers."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import List, Optional

import numpy as np

# statuses reported by run drivers
CONVERGED = "converged"
MAX_ITERS = "max_iters"
STATIONARY = "stationary"
CANDIDATE_STATIONARY = "candidate_stationary"
WORK_LIMIT = "work_limit"


@dataclass
class TraceRecord:
    """State at the start of iteration k and the outcome of that iteration.

    f and grad_norm are exact values at x_k whenever the run has access to
    them (deterministic runs, or stochastic runs with a probe problem).
    Fields a method does not produce stay ``None``.
    """

    k: int
    x: np.ndarray
    f: Optional[float]
    grad_norm: Optional[float]
    alpha: float
    W: Optional[int] = None
    mred: Optional[float] = None
    fred: Optional[float] = None
    ratio: Optional[float] = None
    step_norm: Optional[float] = None
    delta: Optional[float] = None
    batch_model: Optional[int] = None
    batch_fn: Optional[int] = None
    chi: Optional[float] = None
    next_grad_norm: Optional[float] = None
    g_est_norm: Optional[float] = None
    f_est0: Optional[float] = None
    f_ests: Optional[float] = None
    reliable: Optional[bool] = None
    samples: Optional[int] = None
    phi: Optional[float] = None

    @property
    def successful(self) -> bool:
        return self.W == 1

    def as_dict(self, with_x: bool = False) -> dict:
        out = {}
        for fl in fields(self):
            if fl.name == "x" and not with_x:
                continue
            v = getattr(self, fl.name)
            out[fl.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass
class RunResult:
    """Full trace of a run.

    ``records[k]`` describes iteration k; ``final`` is the snapshot of the
    state the run stopped in (it carries no outcome, ``W is None``).  So
    ``snapshots`` has one more element than ``records``.
    """

    method: str
    records: List[TraceRecord]
    final: TraceRecord
    status: str
    stop_index: Optional[int] = None
    samples: int = 0
    info: dict = field(default_factory=dict)

    @property
    def snapshots(self) -> List[TraceRecord]:
        return list(self.records) + [self.final]

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def x(self) -> np.ndarray:
        return self.final.x

    def column(self, name: str, include_final: bool = True) -> list:
        rows = self.snapshots if include_final else self.records
        return [getattr(r, name) for r in rows]
