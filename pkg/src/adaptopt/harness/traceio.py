"""Trace CSV serialization.

One row per snapshot: the iterations in order, then the state the run
stopped in (its outcome columns are empty).  Floats use the shortest
scientific representation that round-trips exactly.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import FormatError
from ..trace import TraceRecord

COLUMNS = ("k", "f", "grad_norm", "alpha", "delta", "W", "batch_model", "batch_fn",
           "phi", "ratio", "chi")
INT_COLUMNS = {"k", "W", "batch_model", "batch_fn"}


def format_number(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return np.format_float_scientific(v, unique=True, trim="-")


def trace_to_csv(snapshots, phis: Optional[list] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for i, r in enumerate(snapshots):
        row = []
        for c in COLUMNS:
            if c == "phi":
                v = phis[i] if phis is not None and i < len(phis) else r.phi
            else:
                v = getattr(r, c)
            row.append(format_number(v))
        w.writerow(row)
    return buf.getvalue()


def write_trace(path, snapshots, phis=None) -> None:
    Path(path).write_text(trace_to_csv(snapshots, phis))


def _parse(c, cell, lineno):
    if cell == "":
        return None
    try:
        return int(cell) if c in INT_COLUMNS else float(cell)
    except ValueError:
        raise FormatError(f"trace line {lineno}: bad value {cell!r} in column {c}") from None


def parse_trace(text: str) -> list:
    """Inverse of :func:`trace_to_csv`; returns TraceRecords with x=None."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != COLUMNS:
        raise FormatError(f"trace header must be {','.join(COLUMNS)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(COLUMNS):
            raise FormatError(f"trace line {lineno}: {len(row)} fields, expected {len(COLUMNS)}")
        vals = {c: _parse(c, cell, lineno) for c, cell in zip(COLUMNS, row)}
        if vals["k"] is None or vals["alpha"] is None:
            raise FormatError(f"trace line {lineno}: k and alpha are required")
        out.append(TraceRecord(x=None, **vals))
    return out


def read_trace(path) -> list:
    return parse_trace(Path(path).read_text())
