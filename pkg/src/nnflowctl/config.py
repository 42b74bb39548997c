"""Run configuration: JSON document, schema validation and default filling."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config", "DEFAULTS", "SCHEMA"]


class ConfigError(ValueError):
    pass


_POS = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "domain": {
            "type": "object", "additionalProperties": False,
            "properties": {"Lx": _POS, "Ly": _POS},
        },
        "grid": {
            "type": "object", "additionalProperties": False,
            "properties": {"nx": {"type": "integer", "minimum": 4, "maximum": 1024},
                           "ny": {"type": "integer", "minimum": 4, "maximum": 1024}},
        },
        "exponent": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["constant", "expression", "grid"]},
                "value": {"type": "number", "exclusiveMinimum": 1},
                "expression": {"type": ["string", "null"], "minLength": 1},
                "file": {"type": ["string", "null"], "minLength": 1},
                "alpha0": {"type": ["number", "null"], "exclusiveMinimum": 1},
                "alpha_inf": {"type": ["number", "null"], "exclusiveMinimum": 1},
                "holder_gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "picard_tol": _POS,
                "picard_max_iter": {"type": "integer", "minimum": 1},
                "linear_tol": _POS,
                "under_relaxation": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "smallness_q": {"type": "number", "exclusiveMinimum": 2},
                "smallness_threshold": _POS,
                "method": {"enum": ["picard", "newton"]},
                "viscosity_floor": _POS,
                "korn_trials": {"type": "integer", "minimum": 1},
            },
        },
        "force": {
            "type": "object", "additionalProperties": False,
            "properties": {"preset": {"type": ["string", "null"]},
                           "file": {"type": ["string", "null"]},
                           "scale": {"type": "number"}},
        },
        "control": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "target": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"preset": {"type": ["string", "null"]},
                                   "file": {"type": ["string", "null"]},
                                   "scale": {"type": "number"}},
                },
                "reg_nu": _POS,
                "max_iter": {"type": "integer", "minimum": 1},
                "grad_tol": _POS,
                "gradient_checks": {"type": "integer", "minimum": 0},
            },
        },
        "verify": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "samples": {"type": "integer", "minimum": 1},
                "alpha_bounds": {"type": "array", "items": {"type": "number",
                                                            "exclusiveMinimum": 1},
                                 "minItems": 2, "maxItems": 2},
                "mms_case": {"enum": ["zero", "newtonian", "thinning", "variable",
                                      "variable_thick"]},
                "mms_grids": {"type": "array", "items": {"type": "integer", "minimum": 4},
                              "minItems": 3},
            },
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"dir": {"type": "string"},
                           "formats": {"type": "array", "items": {"enum": ["csv", "vtk"]},
                                       "uniqueItems": True}},
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

DEFAULTS = {
    "domain": {"Lx": 1.0, "Ly": 1.0},
    "grid": {"nx": 32, "ny": 32},
    "exponent": {"kind": "constant", "value": 2.0, "expression": None, "file": None,
                 "alpha0": None, "alpha_inf": None, "holder_gamma": 0.5},
    "solver": {"picard_tol": 1e-9, "picard_max_iter": 200, "linear_tol": 1e-11,
               "under_relaxation": 1.0, "smallness_q": 4.0, "smallness_threshold": 10.0,
               "method": "picard", "viscosity_floor": 1e-12, "korn_trials": 4},
    "force": {"preset": "zero", "file": None, "scale": 1.0},
    "control": {"target": {"preset": "recoverable", "file": None, "scale": 1.0},
                "reg_nu": 1e-6, "max_iter": 60, "grad_tol": 1e-10, "gradient_checks": 0},
    "verify": {"samples": 100000, "alpha_bounds": [1.1, 4.0], "mms_case": "newtonian",
               "mms_grids": [16, 32, 64, 128]},
    "output": {"dir": "out", "formats": ["csv", "vtk"]},
    "seed": 0,
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _message(err: jsonschema.ValidationError) -> str:
    key = ".".join(str(p) for p in err.absolute_path) or "<root>"
    if key.endswith(("alpha0", "alpha_inf", "value", "alpha_bounds.0", "alpha_bounds.1")) \
            and err.validator == "exclusiveMinimum":
        return (f"{key}: {err.instance!r} violates the exponent lower bound "
                f"(exponents must satisfy 1 < alpha0 <= alpha(x))")
    if err.validator == "additionalProperties":
        return f"{key}: {err.message}"
    return f"{key}: {err.message} (constraint {err.validator}={err.validator_value!r})"


@dataclass(frozen=True)
class RunConfig:
    data: dict
    base_dir: Path

    def __getitem__(self, key):
        return self.data[key]

    def echo(self) -> str:
        """Canonical JSON of every effective parameter (sorted keys)."""
        return json.dumps(self.data, indent=2, sort_keys=True)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p


def _semantic_checks(d: dict, base: Path) -> None:
    e = d["exponent"]
    a0, ainf = e["alpha0"], e["alpha_inf"]
    if a0 is not None and ainf is not None and a0 > ainf:
        raise ConfigError(f"exponent: alpha0={a0} exceeds alpha_inf={ainf}")
    if e["kind"] == "expression" and not e["expression"]:
        raise ConfigError("exponent.expression: required for kind 'expression'")
    if e["kind"] == "grid" and not e["file"]:
        raise ConfigError("exponent.file: required for kind 'grid'")
    lo, hi = d["verify"]["alpha_bounds"]
    if lo > hi:
        raise ConfigError(f"verify.alpha_bounds: lower bound {lo} exceeds upper bound {hi}")
    dom, grid = d["domain"], d["grid"]
    if abs(dom["Lx"] / grid["nx"] - dom["Ly"] / grid["ny"]) > 1e-12 * dom["Lx"]:
        raise ConfigError("grid: cells must be square (Lx/nx == Ly/ny)")
    g = d["verify"]["mms_grids"]
    if any(b != 2 * a for a, b in zip(g, g[1:])):
        raise ConfigError("verify.mms_grids: each grid must double the previous resolution")
    refs = [("exponent.file", e["file"] if e["kind"] == "grid" else None),
            ("force.file", d["force"]["file"]),
            ("control.target.file", d["control"]["target"]["file"])]
    for key, rel in refs:
        if rel is None:
            continue
        p = Path(rel) if Path(rel).is_absolute() else base / rel
        probe = [p] if key == "exponent.file" else [p.with_name(p.name + "_u.csv"),
                                                   p.with_name(p.name + "_v.csv")]
        for q in probe:
            if not q.exists():
                raise ConfigError(f"{key}: referenced file {q} does not exist")


def load_config(data: dict, base_dir=".") -> RunConfig:
    """Validate an in-memory config document and fill defaults."""
    if not isinstance(data, dict):
        raise ConfigError("<root>: config must be a JSON object")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError(_message(errors[0]))
    full = _merge(DEFAULTS, data)
    base = Path(base_dir)
    _semantic_checks(full, base)
    return RunConfig(full, base)


def parse_config(path) -> RunConfig:
    """Read a UTF-8 JSON config; raises OSError if missing, ConfigError if invalid."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return load_config(data, path.parent)
