"""Acceptance criteria, one test per criterion.

Every test prints a single ``PASS``/``FAIL`` line with the measured numbers
and the runtime. Run them alone with::

    pytest tests/test_acceptance.py -v -s
    python3 tests/test_acceptance.py        # same checks, plain report
"""

import json
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from nnflowctl.control import check_gradient, optimize
from nnflowctl.exponent import ExponentField
from nnflowctl.grid import Grid, StaggeredField
from nnflowctl.presets import RECOVERABLE, force, recoverable_problem
from nnflowctl.state import SolverConfig, energy_identity_check, solve_state
from nnflowctl.tensor import TensorConstants
from nnflowctl.verification import (
    MMS_CASES,
    convergence_study,
    inequality_campaign,
    jacobian_consistency,
    negative_controls,
    structural_identities,
)

ROOT = Path(__file__).resolve().parents[1]

# tracking reduction 1 - tracking(u*) / J(0) reached by scipy's L-BFGS-B on the
# recoverable-target preset (tools/optimizer_oracle.py)
ORACLE_TRACKING_REDUCTION = 0.99964483708295404


def _timed(fn):
    t0 = time.perf_counter()
    ok, detail = fn()
    return ok, detail, time.perf_counter() - t0


def criterion_1():
    k = TensorConstants.from_bounds(1.1, 4.0)
    rep = inequality_campaign(k, samples=100_000, seed=0)
    worst = {c: v["worst_margin"] for c, v in rep["checks"].items()}
    negatives = {name: inequality_campaign(c, samples=100_000, seed=0)["passed"]
                 for name, c in negative_controls(1.1, 4.0).items()}
    ok = rep["passed"] and min(worst.values()) >= -1e-12 and not any(negatives.values())
    detail = ("worst " + " ".join(f"{c}={m:.2e}" for c, m in worst.items())
              + "; negative controls failing: "
              + ",".join(n for n, passed in negatives.items() if not passed))
    return ok, detail


def criterion_2():
    errs = []
    for dim in (2, 3):
        rep = jacobian_consistency(samples=1000, seed=0, dim=dim)
        errs += [rep["jacobian_max_rel_error"], rep["potential_gradient_max_rel_error"]]
    return max(errs) <= 1e-6, f"max relative FD error {max(errs):.2e} (limit 1e-6)"


def criterion_3():
    rep = structural_identities(Grid.unit_square(32), fields=100, seed=0)
    w = rep["worst"]
    return max(w.values()) <= 1e-12, " ".join(f"{k}={v:.2e}" for k, v in w.items())


def criterion_4():
    g = Grid.unit_square(16)
    worst_excess, worst_gap, count = -np.inf, 0.0, 0
    for alpha in ("1.2", "1.5", "1.8", "2.0", "2.5", "3.5", "2 - 0.5*sin(pi*x1)"):
        field = ExponentField.from_expression(alpha)
        for name, scale in (("vortex", 0.5), ("vortex", 1.0), ("shear", 1.0)):
            u = force(name, g, scale)
            for method in ("picard", "newton"):
                sol = solve_state(u, field, g, SolverConfig(method=method))
                worst_excess = max(worst_excess, sol.energy_lhs - sol.energy_rhs_bound)
                worst_gap = max(worst_gap, energy_identity_check(sol, u, field, g))
                count += 1
    ok = worst_excess <= 1e-8 and worst_gap <= 1e-7
    return ok, (f"{count} solves: max(|Dy| - C8*|u|)={worst_excess:.3e}, "
                f"max identity gap={worst_gap:.2e}")


def criterion_5():
    grids = [Grid.unit_square(n) for n in (16, 32, 64, 128)]
    newt = convergence_study(MMS_CASES["newtonian"], grids)
    var = convergence_study(MMS_CASES["variable"], grids)
    n_orders = [r["order_L2"] for r in newt[1:]]
    v_orders = [r["order_L2"] for r in var[1:]]
    v_err = [r["error_L2"] for r in var]
    ok = (all(abs(o - 2.0) <= 0.2 for o in n_orders)
          and all(b < a for a, b in zip(v_err, v_err[1:]))
          and min(v_orders) >= 1.5)
    return ok, ("newtonian L2 orders " + ", ".join(f"{o:.3f}" for o in n_orders)
                + "; variable L2 orders " + ", ".join(f"{o:.3f}" for o in v_orders))


def criterion_6():
    prob, u_dag = recoverable_problem()
    u = force("shear", prob.g, 0.5)
    rows = check_gradient(u, prob, directions=10, eps=1e-5, seed=0)
    worst = max(r["rel_error"] for r in rows)
    return worst <= 1e-4, f"max relative error over 10 directions {worst:.2e} (limit 1e-4)"


def criterion_7():
    prob, _ = recoverable_problem()
    u, trace = optimize(StaggeredField.zeros(prob.g), prob, RECOVERABLE["max_iter"],
                        RECOVERABLE["grad_tol"])
    reduction = 1.0 - trace.tracking[-1] / trace.J[0]
    threshold = 0.95 * ORACLE_TRACKING_REDUCTION
    ok = trace.monotone() and trace.bounded(prob.reg_nu) and reduction >= threshold
    return ok, (f"monotone={trace.monotone()} bounded={trace.bounded(prob.reg_nu)} "
                f"reduction={reduction:.6f} (threshold {threshold:.6f}, "
                f"{len(trace) - 1} iterations, status {trace.status})")


DETERMINISM_RUNS = [["solve"], ["optimize"], ["verify", "tensor"], ["verify", "mms"],
                    ["verify", "constants"], ["tensor-check"]]


def _snapshot(out: Path) -> dict:
    return {p.relative_to(out).as_posix(): p.read_bytes()
            for p in sorted(out.rglob("*")) if p.is_file()}


def criterion_8(workdir: Path):
    cfg = workdir / "golden.json"
    shutil.copy(ROOT / "configs" / "golden.json", cfg)
    out = workdir / "out"
    snaps = []
    for _ in range(2):
        for args in DETERMINISM_RUNS:
            r = subprocess.run([sys.executable, "-m", "nnflowctl", *args, "--config", str(cfg),
                                "--out", str(out), "--seed", "0", "--threads", "1"],
                               capture_output=True, text=True)
            if r.returncode != 0:
                return False, f"{' '.join(args)} exited {r.returncode}: {r.stderr[:300]}"
            # every command rewrites run.log; keep one copy per command
            shutil.copy(out / "run.log", out / f"run_{'_'.join(args)}.log")
        snaps.append(_snapshot(out))
    a, b = snaps
    differ = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    reports = [k for k in a if k.endswith((".json", ".csv"))]
    return not differ, (f"{len(a)} files ({len(reports)} JSON/CSV reports) compared, "
                        f"differing: {differ or 'none'}")


def _report(capsys, number, title, result, limit=None):
    ok, detail, secs = result
    line = (f"{'PASS' if ok else 'FAIL'} criterion {number} {title}: {detail} "
            f"[{secs:.1f} s" + (f", limit {limit:.0f} s]" if limit else "]"))
    with capsys.disabled():
        print("\n" + line)
    return ok and (limit is None or secs < limit)


def test_criterion_1_tensor_inequalities(capsys):
    assert _report(capsys, 1, "tensor inequality suite", _timed(criterion_1), 30)


def test_criterion_2_jacobian_consistency(capsys):
    assert _report(capsys, 2, "Jacobian consistency", _timed(criterion_2), 10)


def test_criterion_3_structural_identities(capsys):
    assert _report(capsys, 3, "discrete structural identities", _timed(criterion_3), 10)


def test_criterion_4_energy_estimate(capsys):
    # the conftest audit additionally checks every converged solve in the suite
    assert _report(capsys, 4, "energy estimate and identity", _timed(criterion_4))


def test_criterion_5_mms_convergence(capsys):
    assert _report(capsys, 5, "MMS convergence", _timed(criterion_5), 300)


def test_criterion_6_gradient_check(capsys):
    assert _report(capsys, 6, "adjoint gradient check", _timed(criterion_6), 120)


def test_criterion_7_minimizing_sequence(capsys):
    assert _report(capsys, 7, "optimizer minimizing sequence", _timed(criterion_7), 600)


def test_criterion_8_determinism(capsys, tmp_path):
    assert _report(capsys, 8, "byte-identical reports", _timed(lambda: criterion_8(tmp_path)))


if __name__ == "__main__":
    import tempfile

    limits = {1: 30, 2: 10, 3: 10, 5: 300, 6: 120, 7: 600}
    failed = 0
    with tempfile.TemporaryDirectory() as tmp:
        checks = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                  criterion_6, criterion_7, lambda: criterion_8(Path(tmp))]
        for number, fn in enumerate(checks, start=1):
            ok, detail, secs = _timed(fn)
            ok = ok and secs < limits.get(number, np.inf)
            failed += not ok
            print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail} [{secs:.1f} s]",
                  flush=True)
    sys.exit(1 if failed else 0)
