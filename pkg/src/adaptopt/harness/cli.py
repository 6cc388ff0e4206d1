"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad config, malformed input,
failed verification), 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from ..analysis import stopping_time, verify_deterministic
from ..errors import AdaptOptError, ConfigurationError, FormatError, InvalidArgumentError
from ..trace import CONVERGED, MAX_ITERS, RunResult
from .config import DET_METHODS, load_config
from .data import gen_synthetic, load_csv, load_idx_pair
from .experiments import build_problem, run_experiment, stop_rule, sweep
from .traceio import format_number, read_trace

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _print(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _brief(summary: dict) -> dict:
    """Summary without the bulky per-epoch curves."""
    out = {k: v for k, v in summary.items() if k not in ("runs", "cells")}
    if "cells" in summary:
        out["cells"] = [{k: c.get(k) for k in ("eps", "seed", "status", "T", "final_grad_norm")}
                        | ({"verdict": c["verification"]["verdict"]} if "verification" in c else {})
                        for c in summary["cells"]]
    return out


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    summary = run_experiment(cfg, args.seed, args.out, args.jobs)
    _print(_brief(summary))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    summary = sweep(cfg, args.seed, args.out, args.jobs)
    _print(_brief(summary))
    return EXIT_OK


def _rebuild(records, method, rule) -> RunResult:
    """RunResult from parsed rows; successful-step reductions and next
    gradient norms are recovered from consecutive rows."""
    for a, b in zip(records, records[1:]):
        if a.W == 1:
            a.fred = a.f - b.f
            a.next_grad_norm = b.grad_norm
        elif a.W == -1:
            a.next_grad_norm = a.grad_norm
    T = stopping_time(records, rule)
    return RunResult(method, records[:-1], records[-1], CONVERGED if T is not None else MAX_ITERS, T)


def cmd_verify(args) -> int:
    run_dir = Path(args.out)
    cfg = load_config(args.config or run_dir / "config.json")
    if cfg.method not in DET_METHODS:
        raise ConfigurationError("verify re-checks deterministic runs only")
    p, _ = build_problem(cfg.problem)
    reports, ok = [], True
    for eps in cfg.eps:
        path = run_dir / f"eps={format_number(eps)}" / "trace.csv"
        if not path.exists():
            raise FormatError(f"missing trace {path}")
        rule = stop_rule(cfg, eps)
        res = _rebuild(read_trace(path), cfg.method, rule)
        v = verify_deterministic(cfg.method, p, cfg.det, res, eps)
        doc = v.to_json()
        doc["eps"] = eps
        reports.append(doc)
        ok &= bool(v.report.verdict) and v.bound_holds
    _print({"method": cfg.method, "reports": reports, "all_pass": ok})
    return EXIT_OK if ok else EXIT_INVALID


def cmd_data_gen(args) -> int:
    ds = gen_synthetic(args.n, args.d, args.margin, args.seed, args.test_fraction)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    def dump(path, X, y):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i}" for i in range(X.shape[1])] + ["label"])
            for row, lab in zip(X, y):
                w.writerow([format_number(v) for v in row] + [int(lab)])

    dump(out, ds.X, ds.y)
    written = [str(out)]
    if ds.X_test is not None:
        tpath = out.with_name(out.stem + "_test" + out.suffix)
        dump(tpath, ds.X_test, ds.y_test)
        written.append(str(tpath))
    _print({"written": written, "N": ds.N, "d": ds.d})
    return EXIT_OK


def cmd_data_inspect(args) -> int:
    if args.labels:
        X, y = load_idx_pair(args.path, args.labels)
    else:
        ds = load_csv(args.path, args.label)
        X, y = ds.X, ds.y
    _print({"N": int(X.shape[0]), "d": int(X.shape[1]), "positive_fraction": float(np.mean(y)),
            "feature_min": float(X.min()), "feature_max": float(X.max())})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adaptopt", description="Adaptive optimization experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, need_config=True):
        sp.add_argument("--config", required=need_config, help="JSON experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override the config's seed list")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="concurrent cells")

    sp = sub.add_parser("run", help="run an experiment")
    common(sp)
    sp.set_defaults(fn=cmd_run)
    sp = sub.add_parser("sweep", help="eps/seed sweep with complexity fit")
    common(sp)
    sp.set_defaults(fn=cmd_sweep)
    sp = sub.add_parser("verify", help="re-check stored deterministic traces")
    common(sp, need_config=False)
    sp.set_defaults(fn=cmd_verify)

    data = sub.add_parser("data", help="dataset utilities")
    dsub = data.add_subparsers(dest="data_command", required=True)
    g = dsub.add_parser("gen", help="write a synthetic two-cloud dataset as CSV")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--margin", type=float, default=2.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--test-fraction", type=float, default=0.2)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_data_gen)
    i = dsub.add_parser("inspect", help="summarize a CSV or IDX image/label pair")
    i.add_argument("path")
    i.add_argument("--labels", default=None, help="IDX labels file (path is then the images file)")
    i.add_argument("--label", default="label", help="CSV label column")
    i.set_defaults(fn=cmd_data_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    if args.command == "verify" and args.out is None:
        print("error: verify needs --out pointing at a run directory", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.fn(args)
    except (ConfigurationError, FormatError, InvalidArgumentError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_INVALID
    except (AdaptOptError, ArithmeticError, OSError, RuntimeError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
