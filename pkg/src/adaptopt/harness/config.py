"""Strict JSON experiment configuration."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from ..det_methods import DetConfig
from ..errors import ConfigurationError
from ..estimators import AccuracySpec
from ..stoch_methods import StochConfig

DET_METHODS = ("tr", "ls", "cubic")
STOCH_METHODS = ("storm", "storm2", "sls")
SG_METHODS = ("sg", "adaptive_sg", "sg_panels")
ALL_METHODS = DET_METHODS + STOCH_METHODS + SG_METHODS

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer", "minimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_DATA = {
    "oneOf": [
        _obj({"source": {"const": "synthetic"}, "n": {"type": "integer", "minimum": 1},
              "d": {"type": "integer", "minimum": 1}, "margin": {"type": "number", "minimum": 0},
              "seed": _int, "test_fraction": {"type": "number", "minimum": 0, "maximum": 1}},
             ["source", "n", "d", "margin"]),
        _obj({"source": {"const": "mnist"}, "dir": {"type": "string"}}, ["source", "dir"]),
        _obj({"source": {"const": "csv"}, "path": {"type": "string"},
              "label": {"type": ["string", "integer"]}, "test_path": {"type": "string"}},
             ["source", "path", "label"]),
    ]
}

_PROBLEM = {
    "oneOf": [
        _obj({"kind": {"const": "quadratic"}, "diag": _vec, "shift": _vec},
             ["kind", "diag", "shift"]),
        _obj({"kind": {"const": "rosenbrock"}, "n": {"type": "integer", "minimum": 2},
              "box_half_width": _pos}, ["kind", "n"]),
        _obj({"kind": {"const": "double_well"}, "n": {"type": "integer", "minimum": 1}},
             ["kind"]),
        _obj({"kind": {"const": "logistic"}, "lam": {"type": "number", "minimum": 0},
              "bias": {"type": "boolean"}, "data": _DATA}, ["kind", "data"]),
    ]
}

_DET = _obj({k: _num for k in ("eta", "gamma", "alpha_bar", "alpha0", "tau", "beta_dir")}
            | {"max_iters": _int})

_ACC = _obj({"kappa_f": _num, "kappa_g": _num, "kappa_h": _num, "delta": _num,
             "order": {"enum": ["first", "second"]}})

_STOCH = _obj(
    {k: _num for k in ("eta", "gamma", "alpha_bar", "alpha0", "delta1", "delta2", "tau",
                       "Delta0", "theta")}
    | {k: _int for k in ("n0", "sample_cap", "batch_cap", "pilot", "max_iters")}
    | {"independent_pair": {"type": "boolean"}, "accuracy": _ACC}
)

_SG = _obj({
    "alphas": _vec, "alpha0s": _vec, "batch": {"type": "integer", "minimum": 1},
    "epochs": {"type": "integer", "minimum": 1}, "sampling": {"enum": ["iid", "shuffle"]},
    "factors": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
    "eta": _pos, "alpha_max": _pos,
})

SCHEMA = _obj(
    {
        "method": {"enum": list(ALL_METHODS)},
        "problem": _PROBLEM,
        "x0": _vec,
        "noise": _obj({"sigma_f": {"type": "number", "minimum": 0},
                       "sigma_g": {"type": "number", "minimum": 0},
                       "sigma_h": {"type": "number", "minimum": 0},
                       "finite_sum": {"type": "boolean"}}),
        "det": _DET,
        "stoch": _STOCH,
        "sg": _SG,
        "eps": {"type": "array", "items": _pos, "minItems": 1},
        "stop": {"enum": ["grad_norm", "next_grad_norm", "second_order"]},
        "fit_mode": {"enum": ["power", "log"]},
        "seeds": {"type": "array", "items": _int, "minItems": 1},
        "verify": {"type": "boolean"},
        "output_dir": {"type": "string"},
    },
    ["method", "problem"],
)


@dataclass
class ExperimentConfig:
    method: str
    problem: dict
    x0: Optional[list] = None
    noise: dict = field(default_factory=dict)
    det: Optional[DetConfig] = None
    stoch: Optional[StochConfig] = None
    sg: dict = field(default_factory=dict)
    eps: list = field(default_factory=lambda: [1e-3])
    stop: Optional[str] = None
    fit_mode: str = "power"
    seeds: list = field(default_factory=lambda: [0])
    verify: bool = True
    output_dir: str = "runs"
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def is_deterministic(self) -> bool:
        return self.method in DET_METHODS

    @property
    def is_stochastic(self) -> bool:
        return self.method in STOCH_METHODS


def validate_config(doc: dict) -> ExperimentConfig:
    """Schema check plus the cross-field invariants of the method configs.
    Every failure is a ConfigurationError."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config invalid at {where}: {exc.message}") from None
    doc = copy.deepcopy(doc)
    method = doc["method"]
    if method in SG_METHODS and doc["problem"]["kind"] != "logistic":
        raise ConfigurationError(f"method {method!r} needs a logistic problem")
    try:
        det = DetConfig(**doc.get("det", {})) if method in DET_METHODS else None
        stoch = None
        if method in STOCH_METHODS:
            sd = dict(doc.get("stoch", {}))
            if "accuracy" in sd:
                sd["accuracy"] = AccuracySpec(**sd["accuracy"])
            stoch = StochConfig(**sd)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None
    return ExperimentConfig(
        method=method,
        problem=doc["problem"],
        x0=doc.get("x0"),
        noise=doc.get("noise", {}),
        det=det,
        stoch=stoch,
        sg=doc.get("sg", {}),
        eps=doc.get("eps", [1e-3]),
        stop=doc.get("stop"),
        fit_mode=doc.get("fit_mode", "power"),
        seeds=doc.get("seeds", [0]),
        verify=doc.get("verify", True),
        output_dir=doc.get("output_dir", "runs"),
        raw=doc,
    )


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from None
    return validate_config(doc)
