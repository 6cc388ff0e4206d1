"""Experiment orchestration: single runs, sweeps and the SG comparison.

Every cell of an experiment (one eps/seed/stepsize combination) is
rebuilt from the raw config, so cells can run in separate processes and
the artifacts depend only on the config and the seeds.
"""
from __future__ import annotations

import csv
import json
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from ..analysis import (
    ProgressMeasure,
    calibrate_alpha_floor,
    choose_nu,
    complexity_fit,
    expected_te_bound,
    h_value,
    phi_value,
    theta_for,
    tr_decrease_constant,
    verify_deterministic,
)
from ..det_methods import run_deterministic
from ..errors import ConfigurationError
from ..problems import (
    FiniteSumOracle,
    NoisyOracle,
    derive_seed,
    double_well_problem,
    logistic_problem,
    quadratic_problem,
    rosenbrock_problem,
)
from ..stoch_methods import adaptive_sg_experiment, run_stochastic, sg_baseline
from ..stopping import StoppingRule
from .config import DET_METHODS, STOCH_METHODS, ExperimentConfig, validate_config
from .data import gen_synthetic, load_csv, load_mnist_dir
from .traceio import format_number, write_trace


# ---------------------------------------------------------------------------
# problem construction


def build_dataset(spec: dict):
    src = spec["source"]
    if src == "synthetic":
        return gen_synthetic(spec["n"], spec["d"], spec["margin"], spec.get("seed", 0),
                             spec.get("test_fraction", 0.2))
    if src == "mnist":
        return load_mnist_dir(spec["dir"])
    data = load_csv(spec["path"], spec["label"])
    if "test_path" in spec:
        test = load_csv(spec["test_path"], spec["label"])
        data.X_test, data.y_test = test.X, test.y
    return data


def build_problem(spec: dict):
    """Return (deterministic problem, finite-sum problem or None)."""
    kind = spec["kind"]
    if kind == "quadratic":
        if len(spec["diag"]) != len(spec["shift"]):
            raise ConfigurationError("quadratic diag and shift lengths differ")
        return quadratic_problem(spec["diag"], spec["shift"]), None
    if kind == "rosenbrock":
        return rosenbrock_problem(spec["n"], spec.get("box_half_width", 2.0)), None
    if kind == "double_well":
        return double_well_problem(spec.get("n", 2)), None
    fs = logistic_problem(build_dataset(spec["data"]), spec.get("lam", 1e-4), spec.get("bias", True))
    return fs.as_deterministic(), fs


def default_x0(spec: dict, n: int) -> np.ndarray:
    kind = spec["kind"]
    if kind == "quadratic":
        return np.asarray(spec["shift"], dtype=float) + 3.0
    if kind == "rosenbrock":
        x = np.ones(n)
        x[0::2] = -1.2
        return x
    if kind == "double_well":
        x = np.full(n, 0.5)
        x[0] = 1.5
        return x
    return np.zeros(n)


def _x0(cfg: ExperimentConfig, p) -> np.ndarray:
    if cfg.x0 is None:
        return default_x0(cfg.problem, p.n)
    x0 = np.asarray(cfg.x0, dtype=float)
    if x0.shape != (p.n,):
        raise ConfigurationError(f"x0 has length {x0.size}, problem dimension is {p.n}")
    return x0


def build_oracle(cfg: ExperimentConfig, p, fs, seed: int):
    nz = cfg.noise
    if fs is not None and nz.get("finite_sum", True):
        return FiniteSumOracle(fs, seed)
    return NoisyOracle(p, nz.get("sigma_f", 0.0), nz.get("sigma_g", 0.0), nz.get("sigma_h", 0.0),
                       seed)


def stop_rule(cfg: ExperimentConfig, eps: float) -> StoppingRule:
    kind = cfg.stop
    if kind is None:
        kind = {"cubic": "next_grad_norm", "storm2": "second_order"}.get(cfg.method, "grad_norm")
    return StoppingRule(kind, eps)


# ---------------------------------------------------------------------------
# cells


def _cell_name(eps, seed):
    parts = []
    if eps is not None:
        parts.append(f"eps={format_number(eps)}")
    if seed is not None:
        parts.append(f"seed={seed}")
    return "_".join(parts)


def _num(v):
    return None if v is None else float(v)


def run_cell(raw: dict, eps: float, seed: Optional[int], out_dir: str) -> dict:
    """One optimization run; writes ``trace.csv`` under ``out_dir``."""
    cfg = validate_config(raw)
    p, fs = build_problem(cfg.problem)
    x0 = _x0(cfg, p)
    rule = stop_rule(cfg, eps)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cell = {"eps": eps, "seed": seed, "method": cfg.method}
    phis = None
    if cfg.is_deterministic:
        res = run_deterministic(cfg.method, p, cfg.det, x0, rule)
        if cfg.verify and rule.kind in ("grad_norm", "next_grad_norm"):
            v = verify_deterministic(cfg.method, p, cfg.det, res, eps)
            phis = v.phis
            cell["verification"] = v.to_json()
    else:
        oracle = build_oracle(cfg, p, fs, seed)
        res = run_stochastic(cfg.method, oracle, cfg.stoch, x0, rule, probe=p)
        cell["samples"] = res.samples
        cell["variance_regime"] = res.info["variance_regime"]
        cell["floor"] = calibrate_alpha_floor(res, cfg.stoch.gamma, res.stop_index)
        succ = [r.W == 1 for r in res.records[: res.stop_index]]
        cell["iterations"] = len(res.records)
        cell["successes"] = int(sum(succ))
    write_trace(out / "trace.csv", res.snapshots, phis)
    cell.update(status=res.status, T=res.stop_index, final_f=_num(res.final.f),
                final_grad_norm=_num(res.final.grad_norm))
    if fs is not None:
        cell["test_accuracy"] = fs.test_accuracy(res.x)
    return cell


def run_sg_cell(raw: dict, kind: str, alpha: float, seed: int) -> dict:
    cfg = validate_config(raw)
    _, fs = build_problem(cfg.problem)
    sg = cfg.sg
    epochs = sg.get("epochs", 10)
    sampling = sg.get("sampling", "iid")
    if kind == "sg":
        res = sg_baseline(fs, alpha, sg.get("batch", 64), epochs, seed, sampling=sampling)
    else:
        res = adaptive_sg_experiment(fs, alpha, sg.get("batch", 64), tuple(sg.get("factors", (2, 2))),
                                     epochs, seed, eta=sg.get("eta", 1e-4),
                                     alpha_max=sg.get("alpha_max", 1.0), sampling=sampling)
    return {"kind": kind, "alpha": alpha, "seed": seed, "sampling": sampling,
            "epochs": res.epochs, "test_accuracy": res.test_accuracy,
            "train_loss": res.train_loss}


def _map(fn, args, jobs):
    if jobs <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        futs = [ex.submit(fn, *a) for a in args]
        return [f.result() for f in futs]


# ---------------------------------------------------------------------------
# artifact directory handling


class _Staging:
    """Write into a hidden sibling directory and move it into place only on
    success, so a failed run leaves no partial artifacts."""

    def __init__(self, out: Path):
        self.out = Path(out)

    def __enter__(self) -> Path:
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.out.name}.", dir=self.out.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.out.exists():
            shutil.rmtree(self.out)
        self.tmp.rename(self.out)
        return False


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _curve_csv(path: Path, runs: list, key: str) -> None:
    """Epoch vs. test accuracy, one column per stepsize (seed-averaged)."""
    alphas = sorted({r["alpha"] for r in runs}, reverse=True)
    epochs = runs[0]["epochs"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch"] + [f"{key}={format_number(a)}" for a in alphas])
        for i, e in enumerate(epochs):
            row = [e]
            for a in alphas:
                vals = [r["test_accuracy"][i] for r in runs if r["alpha"] == a]
                row.append(format_number(float(np.mean(vals))))
            w.writerow(row)


def _resolve(cfg: ExperimentConfig, seed, out):
    seeds = [seed] if seed is not None else list(cfg.seeds)
    return seeds, Path(out if out is not None else cfg.output_dir)


def _cells(cfg, seeds, root: Path):
    if cfg.is_deterministic:
        return [(cfg.raw, e, None, str(root / _cell_name(e, None))) for e in cfg.eps]
    return [(cfg.raw, e, s, str(root / _cell_name(e, s))) for e in cfg.eps for s in seeds]


def _run_sg(cfg, seeds, root: Path, jobs: int) -> dict:
    sg = cfg.sg
    tasks = []
    if cfg.method in ("sg", "sg_panels"):
        tasks += [(cfg.raw, "sg", a, s) for a in sg.get("alphas", [1.0, 0.1, 0.01]) for s in seeds]
    if cfg.method in ("adaptive_sg", "sg_panels"):
        tasks += [(cfg.raw, "adaptive", a, s) for a in sg.get("alpha0s", [1.0, 0.1, 0.01])
                  for s in seeds]
    runs = _map(run_sg_cell, tasks, jobs)
    sgr = [r for r in runs if r["kind"] == "sg"]
    adr = [r for r in runs if r["kind"] == "adaptive"]
    summary = {"method": cfg.method, "runs": runs}
    if sgr:
        _curve_csv(root / "sg_curves.csv", sgr, "alpha")
        summary["best_sg_final_accuracy"] = max(r["test_accuracy"][-1] for r in sgr)
    if adr:
        _curve_csv(root / "adaptive_curves.csv", adr, "alpha0")
        summary["adaptive_final_accuracy"] = {format_number(r["alpha"]): r["test_accuracy"][-1]
                                              for r in adr}
    if sgr and adr:
        best = summary["best_sg_final_accuracy"]
        summary["adaptive_gap"] = {k: best - v for k, v in summary["adaptive_final_accuracy"].items()}
    return summary


def run_experiment(config, seed: Optional[int] = None, out=None, jobs: int = 1) -> dict:
    """Run every cell of ``config`` (path or validated config) and write
    traces, ``summary.json`` and plot data under the output directory."""
    cfg = config if isinstance(config, ExperimentConfig) else _load(config)
    seeds, root = _resolve(cfg, seed, out)
    with _Staging(root) as tmp:
        _write_json(tmp / "config.json", cfg.raw)
        if cfg.method in DET_METHODS + STOCH_METHODS:
            cells = _cells(cfg, seeds, tmp)
            results = _map(run_cell, cells, jobs)
            summary = {"method": cfg.method, "cells": results}
        else:
            summary = _run_sg(cfg, seeds, tmp, jobs)
        _write_json(tmp / "summary.json", summary)
    return summary


def _load(config):
    from .config import load_config

    return load_config(config)


# ---------------------------------------------------------------------------
# sweeps


def _stoch_bound(cfg: ExperimentConfig, p, x0, eps, cells) -> dict:
    """Expected stopping-time bound from constants calibrated on the
    sweep's own traces: alpha floor = smallest per-seed floor, delta = one
    minus the success rate at alpha <= gamma * floor, Theta from the
    deterministic trust-region formula."""
    c = cfg.stoch
    kind = "tr_second" if cfg.method == "storm2" else "tr_first"
    c2 = tr_decrease_constant(1.0 / c.tau, p.lipschitz)
    nu = choose_nu(kind, c.eta, c.gamma, c2)
    theta = theta_for(kind, nu, c.gamma)
    floor = min(cl["floor"] for cl in cells)
    f_star = p.f_star if p.f_star is not None else 0.0
    phi0 = phi_value(ProgressMeasure(kind, nu, f_star, eps), {"f": p.f(x0), "alpha": c.alpha0})
    h = h_value("alpha3" if kind == "tr_second" else "alpha2", floor, eps)
    return {"nu": nu, "theta": theta, "alpha_floor": floor, "phi0": phi0, "h": h,
            "theta_source": "deterministic formula"}


def sweep(config, seed: Optional[int] = None, out=None, jobs: int = 1) -> dict:
    cfg = config if isinstance(config, ExperimentConfig) else _load(config)
    if len(set(cfg.eps)) < 2:
        raise ConfigurationError("a sweep needs at least two distinct eps values")
    if cfg.method not in DET_METHODS + STOCH_METHODS:
        raise ConfigurationError(f"sweeps are defined for optimization methods, not {cfg.method!r}")
    seeds, root = _resolve(cfg, seed, out)
    with _Staging(root) as tmp:
        _write_json(tmp / "config.json", cfg.raw)
        results = _map(run_cell, _cells(cfg, seeds, tmp), jobs)
        p, _ = build_problem(cfg.problem)
        x0 = _x0(cfg, p)
        table = []
        for e in sorted(set(cfg.eps), reverse=True):
            cells = [r for r in results if r["eps"] == e]
            Ts = [r["T"] for r in cells if r["T"] is not None]
            row = {"eps": e, "runs": len(cells), "converged": len(Ts)}
            if Ts:
                row.update(mean_T=float(np.mean(Ts)), p10_T=float(np.percentile(Ts, 10)),
                           p50_T=float(np.percentile(Ts, 50)), p90_T=float(np.percentile(Ts, 90)))
            if cfg.method in ("storm", "storm2") and Ts:
                b = _stoch_bound(cfg, p, x0, e, cells)
                fails = [r for r in cells if r["T"] is None]
                row["bound_constants"] = b
                delta = _delta_hat(tmp, cells, b["alpha_floor"], cfg.stoch.gamma)
                row["delta_hat"] = delta
                row["expected_bound"] = (expected_te_bound(b["phi0"], b["theta"], b["h"], delta)
                                         if delta < 0.5 else None)
                row["exceeds_bound"] = (row["expected_bound"] is not None
                                        and row["mean_T"] > row["expected_bound"]) or bool(fails)
            table.append(row)
        fit = None
        pts = [(r["eps"], r["mean_T"]) for r in table if r.get("mean_T")]
        if len(pts) >= 2 and (cfg.fit_mode == "log" or all(t > 0 for _, t in pts)):
            f = complexity_fit(pts, cfg.fit_mode)
            fit = {"mode": cfg.fit_mode, "slope": f.slope, "intercept": f.intercept,
                   "residual": f.residual, "r_squared": f.r_squared}
        summary = {"method": cfg.method, "table": table, "fit": fit, "cells": results}
        _write_json(tmp / "summary.json", summary)
        _table_csv(tmp / "sweep.csv", table)
    return summary


def _delta_hat(root: Path, cells, floor, gamma) -> float:
    from .traceio import read_trace

    hits = wins = 0
    for cl in cells:
        name = _cell_name(cl["eps"], cl["seed"])
        recs = read_trace(root / name / "trace.csv")
        T = cl["T"] if cl["T"] is not None else len(recs) - 1
        for r in recs[:T]:
            if r.W is not None and r.alpha <= gamma * floor:
                hits += 1
                wins += r.W == 1
    return 0.0 if hits == 0 else 1.0 - wins / hits


def _table_csv(path: Path, table) -> None:
    cols = ["eps", "runs", "converged", "mean_T", "p10_T", "p50_T", "p90_T", "expected_bound",
            "exceeds_bound"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in table:
            w.writerow([format_number(r.get(c)) if not isinstance(r.get(c), bool)
                        else str(r[c]).lower() for c in cols])
