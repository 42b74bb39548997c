import numpy as np
import pytest

from nnflowctl import control as control_mod
from nnflowctl.control import (
    ControlProblem,
    OptimizationError,
    check_gradient,
    continuity_ladder,
    evaluate_J,
    gradient_J,
    optimize,
    tight_config,
)
from nnflowctl.exponent import ExponentField
from nnflowctl.grid import Grid, StaggeredField, inner_product, l2_norm
from nnflowctl.presets import force, recoverable_problem
from nnflowctl.state import SolverConfig, SolverDivergenceError, solve_state

G = Grid.unit_square(12)
FIELD = ExponentField.constant(1.8)
CFG = tight_config(SolverConfig())


def problem(y_d=None, reg=1e-3, field=FIELD):
    y_d = StaggeredField.zeros(G) if y_d is None else y_d
    return ControlProblem(y_d, reg, field, G, CFG)


def test_problem_validation():
    with pytest.raises(ValueError):
        problem(reg=0.0)
    with pytest.raises(ValueError):
        ControlProblem(StaggeredField.zeros(Grid.unit_square(8)), 1.0, FIELD, G)
    bad = StaggeredField(np.full(G.u_shape, np.inf), np.zeros(G.v_shape))
    with pytest.raises(ValueError):
        ControlProblem(bad, 1.0, FIELD, G)


def test_J_at_zero_control():
    J, sol = evaluate_J(StaggeredField.zeros(G), problem())
    assert J == 0.0
    y_d = force("vortex", G, 0.01)
    J, _ = evaluate_J(StaggeredField.zeros(G), problem(y_d))
    assert J == pytest.approx(0.5 * inner_product(y_d, y_d, G), rel=1e-14)


def test_reachable_target_leaves_only_regularization():
    u_star = force("vortex", G, 0.3)
    y_d = solve_state(u_star, FIELD, G, CFG).y
    prob = problem(y_d, reg=1e-2)
    J, sol = evaluate_J(u_star, prob)
    assert J == pytest.approx(0.5e-2 * inner_product(u_star, u_star, G), rel=1e-12)
    grad = gradient_J(u_star, prob, sol)
    np.testing.assert_allclose(grad.flat, 1e-2 * u_star.flat, atol=1e-12 * np.abs(u_star.flat).max())


@pytest.mark.parametrize("alpha", ["1.4", "2.0", "2.7", "2 - 0.5*sin(pi*x1)"])
def test_gradient_matches_finite_differences(alpha):
    field = ExponentField.from_expression(alpha)
    y_d = force("shear", G, 0.02)
    prob = problem(y_d, reg=1e-3, field=field)
    u = force("vortex", G, 0.5)
    for row in check_gradient(u, prob, directions=4, seed=1):
        assert row["rel_error"] <= 1e-4


def test_gradient_vanishes_on_wall_faces():
    prob = problem(force("shear", G, 0.02))
    grad = gradient_J(force("vortex", G, 0.5), prob)
    assert grad.boundary_max() == 0.0


def test_trivial_optimization_stops_immediately():
    u, trace = optimize(StaggeredField.zeros(G), problem())
    assert len(trace) == 1 and trace.status == "converged"
    assert np.all(u.flat == 0.0)


def test_optimizer_trace_invariants(tmp_path):
    prob, _ = recoverable_problem(n=12, reg_nu=1e-5)
    u, trace = optimize(StaggeredField.zeros(prob.g), prob, max_iter=15, grad_tol=1e-10)
    assert trace.monotone()
    assert trace.bounded(prob.reg_nu)
    assert trace.J[-1] < 0.1 * trace.J[0]
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,J,u_norm,grad_norm,step,tracking"
    assert len(lines) == len(trace) + 1
    assert float(lines[-1].split(",")[1]) == trace.J[-1]


def test_doubling_regularization_never_grows_the_control():
    norms = []
    for reg in (1e-5, 2e-5, 4e-5):
        prob, _ = recoverable_problem(n=12, reg_nu=reg)
        u, trace = optimize(StaggeredField.zeros(prob.g), prob, max_iter=40, grad_tol=1e-10)
        norms.append(l2_norm(u, prob.g))
    assert norms[0] >= norms[1] >= norms[2]


def test_continuity_ladder_decreases():
    prob = problem(force("shear", G, 0.02))
    ladder = continuity_ladder(force("vortex", G, 0.5), prob, rungs=6)
    gaps = [gap for _, gap in ladder]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-4 * gaps[0]


def test_failed_state_solve_halves_the_step(monkeypatch):
    prob = problem(force("shear", G, 0.02))
    real = control_mod.evaluate_J
    calls = {"n": 0}

    def flaky(u, p, y0=None):
        calls["n"] += 1
        if calls["n"] == 2:      # first line-search trial
            raise SolverDivergenceError("injected", history=[1.0])
        return real(u, p, y0)

    monkeypatch.setattr(control_mod, "evaluate_J", flaky)
    u, trace = optimize(force("vortex", G, 0.5), prob, max_iter=3)
    assert len(trace) >= 2
    assert trace.step[1] <= 0.5
    assert trace.monotone()


def test_persistent_state_failure_raises_with_trace(monkeypatch):
    prob = problem(force("shear", G, 0.02))
    real = control_mod.evaluate_J
    calls = {"n": 0}

    def broken(u, p, y0=None):
        calls["n"] += 1
        if calls["n"] > 1:
            raise SolverDivergenceError("injected", history=[1.0])
        return real(u, p, y0)

    monkeypatch.setattr(control_mod, "evaluate_J", broken)
    with pytest.raises(OptimizationError) as exc:
        optimize(force("vortex", G, 0.5), prob, max_iter=3, max_halvings=5)
    assert exc.value.trace.status == "state_failure"
    assert len(exc.value.trace) == 1


def test_optimize_rejects_bad_arguments():
    with pytest.raises(ValueError):
        optimize(StaggeredField.zeros(G), problem(), max_iter=0)
