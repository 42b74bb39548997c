"""Reference run of the recoverable-target experiment with scipy's L-BFGS-B.

Prints the tracking reduction ``1 - tracking(u*) / J(0)`` reached by an
independent quasi-Newton driver on the same discrete functional. The value
is frozen in ``tests/test_acceptance.py``.
"""

import numpy as np
from scipy.optimize import minimize

from nnflowctl.control import evaluate_J, gradient_J
from nnflowctl.grid import StaggeredField, inner_product, operators
from nnflowctl.presets import recoverable_problem


def main():
    prob, _ = recoverable_problem()
    g = prob.g
    ops = operators(g)
    F = ops.free_idx
    sw = np.sqrt(ops.face_w[F])
    state = {}

    def unpack(z):
        v = np.zeros(g.n_vel)
        v[F] = z / sw
        return StaggeredField.from_flat(g, v)

    def fun(z):
        u = unpack(z)
        J, sol = evaluate_J(u, prob, y0=state.get("y"))
        state["y"] = sol.y
        grad = gradient_J(u, prob, sol)
        return J, grad.flat[F] * sw

    J0, _ = evaluate_J(StaggeredField.zeros(g), prob)
    res = minimize(fun, np.zeros(len(F)), jac=True, method="L-BFGS-B",
                   options={"maxiter": 2000, "ftol": 1e-16, "gtol": 1e-12, "maxcor": 20})
    _, sol = evaluate_J(unpack(res.x), prob)
    e = sol.y - prob.y_d
    tracking = 0.5 * inner_product(e, e, g)
    print(f"status={res.status} nit={res.nit} J0={J0:.17g} J*={res.fun:.17g}")
    print(f"tracking_reduction={1.0 - tracking / J0:.17g}")


if __name__ == "__main__":
    main()
