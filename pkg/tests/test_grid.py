import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nnflowctl.grid import (
    Grid,
    StaggeredField,
    SymTensorField,
    convect,
    discrete_stream_field,
    div_stress,
    divergence,
    estimate_poincare_korn,
    grad_norm,
    inner_product,
    l2_norm,
    pressure_gradient,
    sym_grad_norm,
    sym_gradient,
    tensor_inner_product,
)

G = Grid.unit_square(16)
seeds = st.integers(0, 2**32 - 1)


def rand_vel(g, rng):
    return StaggeredField(rng.standard_normal(g.u_shape),
                          rng.standard_normal(g.v_shape)).with_dirichlet()


def rand_divfree(g, rng):
    psi = np.zeros((g.nx + 1, g.ny + 1))
    psi[1:-1, 1:-1] = rng.standard_normal((g.nx - 1, g.ny - 1))
    return discrete_stream_field(psi, g)


def rand_tensor(g, rng):
    return SymTensorField.from_components(*rng.standard_normal((3, g.nx, g.ny, 4)))


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(1.0, 1.0, 3, 3)
    with pytest.raises(ValueError):
        Grid(1.0, 2.0, 8, 8)
    g = Grid(1.0, 2.0, 8, 16)
    assert g.h == 0.125
    assert g.u_shape == (9, 16) and g.v_shape == (8, 17)


def test_zero_field_gives_zero_everything():
    z = StaggeredField.zeros(G)
    assert np.all(sym_gradient(z, G).values == 0)
    assert np.all(divergence(z, G) == 0)
    assert np.all(convect(rand_vel(G, np.random.default_rng(0)), z, G).flat == 0)
    assert np.all(div_stress(SymTensorField.constant(G, np.zeros((2, 2))), G).flat == 0)


def test_rigid_rotation_has_zero_strain_inside():
    y = StaggeredField.from_functions(G, lambda x, y: -y, lambda x, y: x)
    D = sym_gradient(y, G).values[1:-1, 1:-1]
    assert np.max(np.abs(D)) <= 1e-12


def test_shear_strain_is_exact_inside():
    y = StaggeredField.from_functions(G, lambda x, y: y, lambda x, y: 0 * x)
    D = sym_gradient(y, G).values[1:-1, 1:-1]
    np.testing.assert_allclose(D, np.broadcast_to([[0, 0.5], [0.5, 0]], D.shape), atol=1e-13)


def test_divergence_exact_on_affine_fields():
    y = StaggeredField.from_functions(G, lambda x, y: x, lambda x, y: -y)
    assert np.max(np.abs(divergence(y, G))) <= 1e-13
    y = StaggeredField.from_functions(G, lambda x, y: x, lambda x, y: 0 * y)
    np.testing.assert_allclose(divergence(y, G), 1.0, rtol=1e-13)


def test_inner_product_quadrature():
    one = np.ones(G.cell_shape)
    assert inner_product(one, one, G) == pytest.approx(1.0, abs=1e-12)
    f = StaggeredField(np.ones(G.u_shape), np.zeros(G.v_shape))
    assert inner_product(f, f, G) == pytest.approx(1.0, abs=1e-12)
    g = Grid.unit_square(128)
    s = StaggeredField.from_functions(g, lambda x, y: np.sin(np.pi * x), lambda x, y: 0 * x)
    assert inner_product(s, s, g) == pytest.approx(0.5, abs=1e-3)
    with pytest.raises(ValueError):
        inner_product(f, one, G)
    with pytest.raises(ValueError):
        inner_product(np.ones((3, 3)), one, G)


@given(seeds)
def test_convection_skew_symmetry(seed):
    rng = np.random.default_rng(seed)
    y, v, w = rand_divfree(G, rng), rand_vel(G, rng), rand_vel(G, rng)
    cv = convect(y, v, G)
    assert abs(inner_product(cv, v, G)) <= 1e-12 * l2_norm(cv, G) * l2_norm(v, G)
    a = inner_product(cv, w, G)
    b = inner_product(convect(y, w, G), v, G)
    assert abs(a + b) <= 1e-12 * max(abs(a), abs(b), 1e-300) + 1e-15


@given(seeds)
def test_stress_divergence_is_negative_adjoint(seed):
    rng = np.random.default_rng(seed)
    T, v = rand_tensor(G, rng), rand_vel(G, rng)
    lhs = inner_product(div_stress(T, G), v, G)
    rhs = -tensor_inner_product(T, sym_gradient(v, G), G)
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs))


@given(seeds)
def test_pressure_gradient_is_negative_adjoint_of_divergence(seed):
    rng = np.random.default_rng(seed)
    p, v = rng.standard_normal(G.cell_shape), rand_vel(G, rng)
    lhs = inner_product(pressure_gradient(p, G), v, G)
    rhs = -inner_product(p, divergence(v, G), G)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-14)


@given(seeds, st.floats(-3, 3), st.floats(-3, 3))
def test_operators_are_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    x, z = rand_vel(G, rng), rand_vel(G, rng)
    comb = x * a + z * b
    np.testing.assert_allclose(sym_gradient(comb, G).values,
                               a * sym_gradient(x, G).values + b * sym_gradient(z, G).values,
                               atol=1e-11)
    np.testing.assert_allclose(divergence(comb, G),
                               a * divergence(x, G) + b * divergence(z, G), atol=1e-11)


def test_constant_tensor_has_zero_divergence_inside():
    T = SymTensorField.constant(G, [[1.0, 2.0], [2.0, -3.0]])
    d = div_stress(T, G)
    assert np.max(np.abs(d.u[2:-2, 1:-1])) <= 1e-11
    assert np.max(np.abs(d.v[1:-1, 2:-2])) <= 1e-11


def test_stream_field_is_divergence_free():
    y = rand_divfree(G, np.random.default_rng(4))
    assert np.max(np.abs(divergence(y, G))) <= 1e-12 * y.max_abs()
    assert y.boundary_max() == 0.0


def test_korn_style_norm_relation():
    # ||D y||^2 = 1/2 ||grad y||^2 for discretely divergence-free wall fields
    y = rand_divfree(G, np.random.default_rng(9))
    assert sym_grad_norm(y, G) ** 2 == pytest.approx(0.5 * grad_norm(y, G) ** 2, rel=1e-12)


def test_poincare_constant_matches_dirichlet_eigenvalue():
    c1, c2 = estimate_poincare_korn(Grid.unit_square(64), trials=2)
    assert c1 == pytest.approx(1.0 / (np.pi * np.sqrt(2.0)), rel=0.05)
    assert 0.0 < c2 <= 1.0


def test_more_trials_never_increase_korn_constant():
    g = Grid.unit_square(16)
    _, c2a = estimate_poincare_korn(g, trials=2)
    _, c2b = estimate_poincare_korn(g, trials=4)
    assert c2b <= c2a
