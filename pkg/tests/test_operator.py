import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from ellnet.errors import AssemblyError, ConfigError, GridMismatchError
from ellnet.fields import Field, coordinates
from ellnet.grid import Grid, GridFunction, inner_product, norm_l2, partial, sample
from ellnet.operator import (CoefficientField, apply, apply_power, assemble, chain_rule_residual,
                             check_order_bounds, coefficient_preset, derived_operator, growth_constant)
from ellnet.spectral import eigensolve

from conftest import laplacian, sine

PRESETS = ["constant", "affine", "quadratic", "trigonometric"]


def tridiagonal(n: int) -> np.ndarray:
    h = 1.0 / (n + 1)
    return (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / h**2


def test_laplacian_is_textbook_stencil():
    np.testing.assert_array_equal(laplacian(1, 3).matrix.toarray(), tridiagonal(3))


def test_zeroth_order_term_adds_identity():
    L = laplacian(1, 3, c=1.0)
    np.testing.assert_allclose(L.matrix.toarray(), tridiagonal(3) + np.eye(3), rtol=1e-15)


def test_matrix_is_linear_in_A():
    L2 = assemble(coefficient_preset("constant", 1, a=2.0), Grid(1, 3))
    np.testing.assert_array_equal(L2.matrix.toarray(), 2 * tridiagonal(3))


def test_apply_examples(rng):
    L = assemble(coefficient_preset("quadratic", 1, c0=1.0), Grid(1, 63))
    eig = eigensolve(L, 2)
    phi = eig.eigenfunction(0)
    np.testing.assert_allclose(apply(L, phi).values, eig.eigenvalues[0] * phi.values,
                               rtol=1e-10, atol=1e-10 * eig.eigenvalues[0] * np.max(np.abs(phi.values)))
    zero = GridFunction.zeros(L.grid)
    assert not np.any(apply(L, zero).values)
    u = GridFunction(L.grid, rng.standard_normal(L.grid.size))
    v = GridFunction(L.grid, rng.standard_normal(L.grid.size))
    lhs, rhs = apply(L, u + v).values, (apply(L, u) + apply(L, v)).values
    np.testing.assert_allclose(lhs, rhs, rtol=1e-13, atol=1e-13 * np.max(np.abs(lhs)))


def test_apply_rejects_other_grid():
    with pytest.raises(GridMismatchError):
        apply(laplacian(1, 5), GridFunction.zeros(Grid(1, 6)))


def test_apply_power_examples(rng):
    L = laplacian(1, 31, c=2.0)
    eig = eigensolve(L, 1)
    phi = eig.eigenfunction(0)
    u = GridFunction(L.grid, rng.standard_normal(L.grid.size))
    np.testing.assert_array_equal(apply_power(L, u, 0).values, u.values)
    np.testing.assert_array_equal(apply_power(L, u, 1).values, apply(L, u).values)
    np.testing.assert_allclose(apply_power(L, phi, 2).values, eig.eigenvalues[0] ** 2 * phi.values,
                               rtol=1e-8, atol=1e-8 * eig.eigenvalues[0] ** 2)
    with pytest.raises(ConfigError):
        apply_power(L, u, -1)


def test_derived_operator_vanishes_for_constant_coefficients(rng):
    coeff = coefficient_preset("constant", 2, a=[[2.0, 0.3], [0.3, 1.0]], c=4.0)
    g = Grid(2, 9)
    u = GridFunction(g, rng.standard_normal(g.size))
    for axes in [(0,), (1,), (0, 1), (1, 1)]:
        assert not np.any(derived_operator(coeff, axes, g)(u).values)


def test_derived_operator_affine_coefficient():
    x = coordinates(1)[0]
    coeff = CoefficientField.from_exprs([[1 + x]], 0, 1)
    g = Grid(1, 31)
    u = sample(Field(sp.sin(sp.pi * x) * sp.exp(x), 1), g)
    np.testing.assert_allclose(derived_operator(coeff, 0, g)(u).values, -partial(u, (2,)).values, rtol=1e-14)


def test_derived_operator_axis_range():
    coeff = coefficient_preset("constant", 2)
    with pytest.raises(ConfigError):
        derived_operator(coeff, (2,), Grid(2, 5))
    with pytest.raises(ConfigError):
        derived_operator(coeff, (0, 1, 0), Grid(2, 5))


def test_chain_rule_constant_coefficients():
    L = laplacian(1, 199, c=1.0)
    for n in (1, 2, 3):
        assert chain_rule_residual(L, sine(1) * Field(sp.exp(coordinates(1)[0]), 1), n, 0) <= 1e-2


def test_chain_rule_variable_coefficient_refines():
    x = coordinates(1)[0]
    coeff = CoefficientField.from_exprs([[1 + x**2]], 0, 1)
    u = Field(sp.sin(sp.pi * x) * sp.exp(x), 1)
    coarse = chain_rule_residual(assemble(coeff, Grid(1, 99)), u, 1, 0)
    fine = chain_rule_residual(assemble(coeff, Grid(1, 199)), u, 1, 0)
    assert fine <= 5e-2
    assert coarse / fine >= 3.5


def test_chain_rule_zero_input():
    L = assemble(coefficient_preset("quadratic", 1), Grid(1, 31))
    assert chain_rule_residual(L, Field(sp.Integer(0), 1), 2, 0) == 0.0
    with pytest.raises(ConfigError):
        chain_rule_residual(L, sine(1), 4, 0)


def test_chain_rule_two_dimensional_mixed_coefficients():
    x, y = coordinates(2)
    coeff = CoefficientField.from_exprs([[2 + x * y, sp.Rational(1, 4) * x], [sp.Rational(1, 4) * x, 1 + y**2]],
                                        1 + x, 2)
    u = Field(sp.sin(sp.pi * x) * sp.sin(sp.pi * y) * sp.exp(x), 2)
    coarse = chain_rule_residual(assemble(coeff, Grid(2, 15)), u, 1, 1)
    fine = chain_rule_residual(assemble(coeff, Grid(2, 31)), u, 1, 1)
    assert coarse / fine >= 3.5


def test_growth_constant_examples():
    assert growth_constant(coefficient_preset("constant", 1, a=1.0, c=0.0)).C == 3.0
    assert growth_constant(coefficient_preset("constant", 1, a=1.0, c=5.0)).C == 15.0
    assert growth_constant(coefficient_preset("constant", 2, a=1.0, c=0.0)).C == 9.0


def test_growth_constant_uses_derivative_table():
    # a = 1 + 0.5 x^2: sups of a, a', a'' are 1.5, 1, 1; C = 3 * 1.5
    assert growth_constant(coefficient_preset("quadratic", 1)).C == pytest.approx(4.5, rel=1e-12)


def test_order_bound_examples():
    L = laplacian(1, 199)
    first = check_order_bounds(L, sine(1), 1)
    assert first.passed
    assert first.lhs == pytest.approx(np.pi**2 * np.sqrt(0.5), rel=1e-3)
    zero = check_order_bounds(L, Field(sp.Integer(0), 1), 1)
    assert zero.passed and zero.lhs == 0.0
    second = check_order_bounds(L, sine(1), 2)
    assert second.passed
    assert second.lhs == pytest.approx(np.pi**4 * np.sqrt(0.5), rel=1e-3)
    assert second.rhs == pytest.approx(4 * 9 * np.pi**4 * np.sqrt(0.5), rel=1e-6)


@pytest.mark.parametrize("preset", PRESETS)
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_matrix_is_bitwise_symmetric(preset, dim):
    n = {1: 40, 2: 12, 3: 6}[dim]
    L = assemble(coefficient_preset(preset, dim, c0=1.0) if preset != "constant"
                 else coefficient_preset("constant", dim, a=1.5, c=1.0), Grid(dim, n))
    diff = L.matrix - L.matrix.T
    assert diff.nnz == 0 or not np.any(diff.data)


def test_full_matrix_coefficient_is_symmetric_and_consistent():
    L = assemble(coefficient_preset("constant", 2, a=[[2.0, 0.5], [0.5, 1.0]]), Grid(2, 63))
    assert (L.matrix != L.matrix.T).nnz == 0
    u = sample(sine(1, 1), L.grid)
    assert L.quadratic_form(u) == pytest.approx(3 * np.pi**2 / 4, rel=1e-3)


@given(st.sampled_from(PRESETS), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_form_is_bounded_below_and_self_adjoint(preset, dim, seed):
    n = {1: 30, 2: 8, 3: 5}[dim]
    params = {"a": 1.2, "c": 0.7} if preset == "constant" else {"c0": 0.7, "c1": 0.2}
    L = assemble(coefficient_preset(preset, dim, **params), Grid(dim, n))
    zeta = L.ellipticity[2]
    r = np.random.default_rng(seed)
    for _ in range(10):
        u = GridFunction(L.grid, r.standard_normal(L.grid.size))
        v = GridFunction(L.grid, r.standard_normal(L.grid.size))
        assert L.quadratic_form(u) >= zeta * norm_l2(u) ** 2 * (1 - 1e-12)
        lhs, rhs = inner_product(apply(L, u), v), inner_product(u, apply(L, v))
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), norm_l2(apply(L, u)) * norm_l2(v))


def test_ellipticity_constants_of_presets():
    m, M, zeta = assemble(coefficient_preset("quadratic", 1, a0=1.0, a1=0.5, c0=2.0), Grid(1, 31)).ellipticity
    assert m == pytest.approx(1.0) and M == pytest.approx(1.5) and zeta == pytest.approx(2.0)


def test_assembly_rejects_non_elliptic_coefficient():
    with pytest.raises(AssemblyError, match="x="):
        assemble(coefficient_preset("affine", 1, a0=-0.2, a1=1.0), Grid(1, 9))
    with pytest.raises(AssemblyError):
        assemble(coefficient_preset("constant", 1, a=1.0, c=-1.0), Grid(1, 9))


def test_coefficient_validation():
    with pytest.raises(ConfigError):
        coefficient_preset("cubic", 1)
    with pytest.raises(ConfigError):
        coefficient_preset("affine", 1, slope=2.0)
    x, y = coordinates(2)
    with pytest.raises(ConfigError):
        CoefficientField.from_exprs([[1, x], [y, 1]], 0, 2)
    with pytest.raises(GridMismatchError):
        assemble(coefficient_preset("constant", 2), Grid(1, 5))


@pytest.mark.parametrize("n_power", [1, 2, 3])
def test_order_bounds_variable_coefficients(n_power):
    x, y = coordinates(2)
    L = assemble(coefficient_preset("trigonometric", 2, c0=1.0, c1=0.5), Grid(2, 31))
    u = Field(sp.sin(sp.pi * x) * sp.sin(2 * sp.pi * y) * sp.exp(x * y), 2)
    record = check_order_bounds(L, u, n_power)
    assert record.passed, record
    assert math.isfinite(record.rhs)
