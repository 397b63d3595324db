import numpy as np
import pytest

from src.engine.errors import DimensionMismatchError, NonFiniteError
from src.engine.symplectic import (
    ScalarField, as_phase_vector, gradient_error, ham_vector_field, integrability_defect,
    hessian_at, linear_field, poisson_bracket, quadratic_field, structure_matrix, symmetry_error,
)


def test_structure_matrix():
    np.testing.assert_array_equal(structure_matrix(1), [[0.0, -1.0], [1.0, 0.0]])
    j = structure_matrix(3)
    np.testing.assert_array_equal(j @ j, -np.eye(6))


def test_canonical_bracket():
    x1 = linear_field([1.0, 0.0, 0.0, 0.0], "x1")
    xi1 = linear_field([0.0, 0.0, 1.0, 0.0], "xi1")
    xi2 = linear_field([0.0, 0.0, 0.0, 1.0], "xi2")
    p = [0.3, -0.2, 0.1, 0.7]
    assert poisson_bracket(x1, xi1, p) == pytest.approx(1.0)
    assert poisson_bracket(xi1, x1, p) == pytest.approx(-1.0)
    assert poisson_bracket(x1, xi2, p) == pytest.approx(0.0)


def test_hyperbolic_vector_field_contracts_x():
    f = quadratic_field(np.array([[0.0, 1.0], [1.0, 0.0]]), "x xi")
    np.testing.assert_allclose(ham_vector_field(f, [2.0, 3.0]), [-2.0, 3.0])


def test_champagne_is_integrable(champagne, rng):
    points = rng.uniform(-1.0, 1.0, size=(20, 4))
    assert integrability_defect(champagne, points) < 1e-12


def test_analytic_gradient_matches_differences(champagne, rng):
    points = rng.uniform(-1.0, 1.0, size=(10, 4))
    for f in champagne.components:
        assert gradient_error(f, points) < 1e-6


def test_finite_difference_hessian_is_symmetric(rng):
    f = ScalarField(func=lambda p: np.sin(p[0]) * p[1] ** 2 + p[0] * p[1] * p[2] - np.cos(p[3]), dim=4)
    points = rng.uniform(-1.0, 1.0, size=(5, 4))
    assert symmetry_error(f, points) == 0.0
    h = f.hessian(points[0])
    x0, x1, x2, _ = points[0]
    assert h[0, 1] == pytest.approx(2.0 * np.cos(x0) * x1 + x2, abs=1e-5)


def test_phase_vector_validation():
    with pytest.raises(DimensionMismatchError):
        as_phase_vector([1.0, 2.0, 3.0])
    with pytest.raises(DimensionMismatchError):
        as_phase_vector([1.0, 2.0], dim=4)
    with pytest.raises(NonFiniteError):
        as_phase_vector([1.0, np.nan])


def test_bracket_dimension_mismatch(champagne):
    x = linear_field([1.0, 0.0], "x")
    with pytest.raises(DimensionMismatchError):
        poisson_bracket(champagne.components[0], x, [0.1, 0.2])


def test_constant_and_transverse_fields():
    constant = ScalarField(func=lambda p: 3.0, grad=lambda p: np.zeros(4), dim=4)
    np.testing.assert_array_equal(ham_vector_field(constant, [0.1, 0.2, 0.3, 0.4]), np.zeros(4))
    xi1 = linear_field([0.0, 1.0], "xi")
    np.testing.assert_allclose(ham_vector_field(xi1, [0.5, 0.2]), [-1.0, 0.0])


def test_hessian_at(champagne):
    h = hessian_at(champagne.components[0], np.zeros(4))
    np.testing.assert_allclose(h, np.diag([-2.0, -2.0, 1.0, 1.0]))
    bad = ScalarField(func=lambda p: 0.0, hess=lambda p: np.full((2, 2), np.nan), dim=2)
    with pytest.raises(NonFiniteError):
        hessian_at(bad, [0.0, 0.0])
