"""Command line entry point: ``nnflowctl {solve,optimize,verify,tensor-check}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import io
from .config import DEFAULTS, ConfigError, RunConfig, load_config, parse_config
from .control import ControlProblem, check_gradient, optimize, tight_config
from .exponent import ExponentField, holder_seminorm
from .grid import Grid, StaggeredField, estimate_poincare_korn, l2_norm, sym_grad_norm
from .presets import FORCES, force
from .state import SolverConfig, solve_state
from .tensor import TensorConstants
from .verification import (
    MMS_CASES,
    convergence_study,
    inequality_campaign,
    jacobian_consistency,
    negative_controls,
)

log = logging.getLogger("nnflowctl")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


class Run:
    """Output directory plus a deterministic run log (no timestamps)."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.out = cfg.resolve(cfg["output"]["dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.lines = [f"command: {command}", "config:", cfg.echo()]

    def note(self, msg: str):
        self.lines.append(msg)

    def write_json(self, name: str, obj) -> Path:
        p = self.out / name
        p.write_text(_dump(obj) + "\n")
        return p

    def close(self):
        (self.out / "run.log").write_text("\n".join(self.lines) + "\n")


# -- builders ---------------------------------------------------------------

def build_grid(cfg: RunConfig) -> Grid:
    d, g = cfg["domain"], cfg["grid"]
    return Grid(d["Lx"], d["Ly"], g["nx"], g["ny"])


def build_field(cfg: RunConfig) -> ExponentField:
    e = cfg["exponent"]
    dom = (cfg["domain"]["Lx"], cfg["domain"]["Ly"])
    kw = {"holder_gamma": e["holder_gamma"]}
    if e["kind"] == "constant":
        return ExponentField.constant(e["value"], domain=dom, **kw)
    if e["kind"] == "expression":
        return ExponentField.from_expression(e["expression"], e["alpha0"], e["alpha_inf"],
                                             domain=dom, **kw)
    return ExponentField.from_csv(cfg.resolve(e["file"]), domain=dom, alpha0=e["alpha0"],
                                  alpha_inf=e["alpha_inf"], **kw)


def build_solver(cfg: RunConfig) -> SolverConfig:
    return SolverConfig(**cfg["solver"])


def _field_source(block: dict, cfg: RunConfig, g: Grid, what: str) -> StaggeredField:
    if block.get("file"):
        return io.import_velocity(cfg.resolve(block["file"]), g) * block["scale"]
    name = block.get("preset")
    if name == "recoverable":
        name = "vortex"
    if name not in FORCES:
        raise ConfigError(f"{what}.preset: unknown preset {name!r}; "
                          f"choose from {sorted(FORCES) + ['recoverable']}")
    return force(name, g, block["scale"])


def _export(run: Run, y: StaggeredField, g: Grid, stem: str):
    for fmt in run.cfg["output"]["formats"]:
        for p in io.export_velocity(y, g, fmt, run.out / stem):
            run.note(f"wrote {p.name}")


def _export_cells(run: Run, values, g: Grid, stem: str):
    for fmt in run.cfg["output"]["formats"]:
        if fmt == "csv":
            io.export_field(values, "csv", run.out / f"{stem}.csv")
            run.note(f"wrote {stem}.csv")
        else:
            io.write_vtk_cells(run.out / f"{stem}.vtk", values, g, name=stem)
            run.note(f"wrote {stem}.vtk")


# -- commands ---------------------------------------------------------------

def cmd_solve(cfg: RunConfig, args) -> dict:
    run = Run(cfg, "solve")
    g = build_grid(cfg)
    field = build_field(cfg)
    u = _field_source(cfg["force"], cfg, g, "force")
    sol = solve_state(u, field, g, build_solver(cfg))
    _export(run, sol.y, g, "velocity")
    _export_cells(run, sol.p, g, "pressure")
    report = {"command": "solve", "y_l2_norm": l2_norm(sol.y, g),
              "y_sym_grad_norm": sym_grad_norm(sol.y, g), "u_l2_norm": l2_norm(u, g),
              "diagnostics": sol.diagnostics()}
    run.write_json("diagnostics.json", report)
    run.note(f"iterations: {sol.iterations}")
    run.close()
    return report


def cmd_optimize(cfg: RunConfig, args) -> dict:
    run = Run(cfg, "optimize")
    g = build_grid(cfg)
    field = build_field(cfg)
    solver = tight_config(build_solver(cfg))
    c = cfg["control"]
    target_force = _field_source(c["target"], cfg, g, "control.target")
    if c["target"].get("file"):
        y_d = target_force
    else:
        y_d = solve_state(target_force, field, g, solver).y
    prob = ControlProblem(y_d, c["reg_nu"], field, g, solver)
    u_star, trace = optimize(StaggeredField.zeros(g), prob, c["max_iter"], c["grad_tol"])
    y_star = solve_state(u_star, field, g, solver).y
    _export(run, u_star, g, "control")
    _export(run, y_star, g, "state")
    _export(run, y_d, g, "target")
    trace.to_csv(run.out / "trace.csv")
    run.note("wrote trace.csv")
    report = {"command": "optimize", "status": trace.status, "iterations": len(trace) - 1,
              "state_solves": trace.state_solves, "J0": trace.J[0], "J_final": trace.J[-1],
              "tracking_final": trace.tracking[-1],
              "tracking_reduction": 1.0 - trace.tracking[-1] / trace.J[0] if trace.J[0] > 0
              else 0.0,
              "u_norm_final": trace.u_norm[-1], "grad_norm_final": trace.grad_norm[-1],
              "J_monotone": trace.monotone(), "bounded_sequence": trace.bounded(c["reg_nu"])}
    if c["gradient_checks"]:
        checks = check_gradient(u_star, prob, c["gradient_checks"], seed=cfg["seed"])
        report["gradient_check_max_rel_error"] = max(r["rel_error"] for r in checks)
    run.write_json("summary.json", report)
    run.close()
    return report


def _constants_from(cfg: RunConfig) -> TensorConstants:
    lo, hi = cfg["verify"]["alpha_bounds"]
    return TensorConstants.from_bounds(lo, hi)


def cmd_verify_tensor(cfg: RunConfig, args) -> dict:
    run = Run(cfg, "verify tensor")
    v = cfg["verify"]
    report = {"command": "verify tensor",
              "campaign": inequality_campaign(_constants_from(cfg), v["samples"], cfg["seed"])}
    lo, hi = v["alpha_bounds"]
    report["negative_controls"] = {
        name: {"passed": r["passed"],
               "violations": {k: e["violations"] for k, e in r["checks"].items()}}
        for name, r in ((n, inequality_campaign(c, v["samples"], cfg["seed"]))
                        for n, c in negative_controls(lo, hi).items())}
    report["negative_controls_all_fail"] = not any(
        r["passed"] for r in report["negative_controls"].values())
    run.write_json("tensor_report.json", report)
    run.close()
    if not report["campaign"]["passed"]:
        raise VerificationFailure("inequality campaign reported violations", report)
    return report


def cmd_verify_mms(cfg: RunConfig, args) -> dict:
    run = Run(cfg, "verify mms")
    v = cfg["verify"]
    case = MMS_CASES[v["mms_case"]]
    grids = [Grid.unit_square(n) for n in v["mms_grids"]]
    rows = convergence_study(case, grids, build_solver(cfg))
    with open(run.out / "convergence.csv", "w") as fh:
        keys = ["n", "h", "error_L2", "error_H1", "order_L2", "order_H1", "iterations"]
        fh.write(",".join(keys) + "\n")
        for r in rows:
            fh.write(",".join("" if r[k] is None else
                              (str(r[k]) if isinstance(r[k], int) else "%.17g" % r[k])
                              for k in keys) + "\n")
    run.note("wrote convergence.csv")
    report = {"command": "verify mms", "case": v["mms_case"], "rows": rows,
              "monotone_decrease": all(b["error_L2"] < a["error_L2"]
                                       for a, b in zip(rows, rows[1:])),
              "energy_estimate_holds": all(r["energy_lhs"] <= r["energy_rhs_bound"] + 1e-8
                                           for r in rows)}
    run.write_json("mms_report.json", report)
    run.close()
    return report


def cmd_verify_constants(cfg: RunConfig, args) -> dict:
    run = Run(cfg, "verify constants")
    g = build_grid(cfg)
    field = build_field(cfg)
    c1, c2 = estimate_poincare_korn(g, cfg["solver"]["korn_trials"], seed=cfg["seed"])
    k = field.constants
    xn, yn = g.nodes()
    pts = np.stack([xn[::2, ::2].ravel(), yn[::2, ::2].ravel()], axis=1)
    report = {"command": "verify constants", "grid": [g.nx, g.ny], "C1_hat": c1,
              "C2_hat": c2, "poincare_reference": float(1.0 / (np.pi * np.sqrt(
                  g.Lx ** -2 + g.Ly ** -2))),
              "tensor_constants": {"alpha0": k.alpha0, "alpha_inf": k.alpha_inf, "C3": k.C3,
                                   "C4": k.C4, "nu_mono": k.nu_mono, "nu_thick": k.nu_thick},
              "holder_gamma": field.holder_gamma,
              "holder_seminorm_estimate": holder_seminorm(field, field.holder_gamma, pts)}
    run.write_json("constants_report.json", report)
    run.close()
    return report


def cmd_tensor_check(cfg: RunConfig, args) -> dict:
    run = Run(cfg, "tensor-check")
    lo, hi = cfg["verify"]["alpha_bounds"]
    n = min(cfg["verify"]["samples"], 1000)
    report = {"command": "tensor-check",
              "dim2": jacobian_consistency(n, cfg["seed"], (lo, hi), dim=2),
              "dim3": jacobian_consistency(n, cfg["seed"], (lo, hi), dim=3)}
    report["passed"] = all(report[d][k] <= 1e-6 for d in ("dim2", "dim3") for k in
                           ("jacobian_max_rel_error", "potential_gradient_max_rel_error"))
    run.write_json("tensor_check.json", report)
    run.close()
    if not report["passed"]:
        raise VerificationFailure("derivative consistency check failed", report)
    return report


class VerificationFailure(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


COMMANDS = {
    "solve": cmd_solve,
    "optimize": cmd_optimize,
    ("verify", "tensor"): cmd_verify_tensor,
    ("verify", "mms"): cmd_verify_mms,
    ("verify", "constants"): cmd_verify_constants,
    "tensor-check": cmd_tensor_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="random seed (overrides seed)")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS thread limit; 1 gives bitwise reproducible runs")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="nnflowctl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve the state equation")
    sub.add_parser("optimize", parents=[common], help="run the control optimizer")
    ver = sub.add_parser("verify", parents=[common], help="verification campaigns")
    ver.add_argument("what", choices=["tensor", "mms", "constants"])
    sub.add_parser("tensor-check", parents=[common], help="stress derivative consistency")
    return p


def _load(args) -> RunConfig:
    if args.config is not None:
        cfg = parse_config(args.config)
        data, base = cfg.data, cfg.base_dir
    else:
        data, base = {}, Path(".")
    data = dict(data)
    if args.out is not None:
        data["output"] = dict(data.get("output", DEFAULTS["output"]), dir=str(args.out.resolve()))
    if args.seed is not None:
        data["seed"] = args.seed
    return load_config(data, base)


def _error(command: str, exc: BaseException, code: int) -> int:
    payload = {"command": command, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, VerificationFailure):
        payload["report"] = exc.report
    sys.stderr.write(_dump(payload) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command if args.command != "verify" else f"verify {args.what}"
    key = args.command if args.command != "verify" else ("verify", args.what)
    try:
        cfg = _load(args)
    except OSError as exc:
        return _error(command, exc, 2)
    except ConfigError as exc:
        return _error(command, exc, 2)
    if args.threads is not None:
        from threadpoolctl import threadpool_limits
        ctx = threadpool_limits(limits=args.threads)
    else:
        ctx = nullcontext()
    try:
        with ctx:
            report = COMMANDS[key](cfg, args)
    except VerificationFailure as exc:
        return _error(command, exc, 3)
    except (ConfigError, ValueError, KeyError) as exc:
        return _error(command, exc, 2)
    except Exception as exc:  # surfaced as machine-readable JSON
        return _error(command, exc, 1)
    sys.stdout.write(_dump(report) + "\n")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
