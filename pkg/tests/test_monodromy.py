from dataclasses import replace

import numpy as np
import pytest

from src.analysis.lattice import PeriodBasis, regular_value
from src.analysis.monodromy import (
    LoopSpec, MonodromyMatrix, _match, compose, conjugate, is_unipotent_upper, loop_monodromy,
    loop_values, monodromy_matrix,
)
from src.engine.errors import (
    ConfigError, MatchingAmbiguityError, NonUnimodularError, RoundingError,
)

TWO_PI = 2.0 * np.pi


def _basis(tau2, v=(0.05, 0.02), scale=1.0):
    rows = scale * np.array([[1.7, tau2], [0.0, TWO_PI]])
    return PeriodBasis(at=regular_value(list(v)), rows=rows, anchor=np.zeros(4), residuals=np.zeros(2))


@pytest.mark.parametrize("kwargs", [
    {"center": [0.0, 0.0], "radius": 0.0},
    {"center": [0.0, 0.0], "radius": 0.05, "steps": 4},
    {"center": [0.0, 0.0], "radius": 0.05, "orientation": 0},
    {"center": [0.0, 0.0], "radius": 0.05, "turns": 0},
    {"center": [np.nan, 0.0], "radius": 0.05},
    {"center": [0.0], "radius": 0.05},
])
def test_loop_validation(kwargs):
    with pytest.raises(ConfigError):
        LoopSpec(**kwargs)


def test_loop_values():
    values = loop_values(LoopSpec([0.0, 0.0, 0.3], 1.0, steps=8, orientation=-1))
    assert len(values) == 8
    np.testing.assert_allclose(values[0], [1.0, 0.0, 0.3])
    np.testing.assert_allclose(values[2], [0.0, -1.0, 0.3], atol=1e-15)
    np.testing.assert_array_equal(LoopSpec([0.0, 0.0, 0.3], 1.0).tail, [0.3])


def test_monodromy_from_shifted_basis():
    m = monodromy_matrix(_basis(0.4), _basis(0.4 + TWO_PI))
    assert m.tolist() == [[1, 1], [0, 1]]
    assert m.determinant == 1
    assert m.is_unipotent_upper()
    assert m.max_rounding_error < 1e-12
    assert m.inverse().tolist() == [[1, -1], [0, 1]]


def test_conjugation_and_composition():
    m = MonodromyMatrix(np.array([[1, 1], [0, 1]]))
    swapped = m.conjugate(np.array([[0, 1], [1, 0]]))
    assert swapped.tolist() == [[1, 0], [1, 1]]
    assert not swapped.is_unipotent_upper()
    assert compose([m, m]).tolist() == [[1, 2], [0, 1]]
    np.testing.assert_array_equal(conjugate(m.entries, np.eye(2)), m.entries)


def test_is_unipotent_upper():
    assert is_unipotent_upper(np.eye(3, dtype=int))
    assert is_unipotent_upper(np.array([[1, 1, 0], [0, 1, 0], [0, 0, 1]]))
    assert not is_unipotent_upper(np.array([[1, 0], [1, 1]]))
    assert not is_unipotent_upper(np.array([[-1, 0], [0, -1]]))


def test_rounding_error():
    with pytest.raises(RoundingError):
        monodromy_matrix(_basis(0.4), _basis(0.4 + np.pi))


def test_non_unimodular():
    with pytest.raises(NonUnimodularError):
        monodromy_matrix(_basis(0.4), _basis(0.4, scale=2.0))


def test_endpoints_must_coincide():
    with pytest.raises(ConfigError):
        monodromy_matrix(_basis(0.4), _basis(0.4, v=(0.06, 0.02)))


def test_match_picks_nearest_shift():
    matched = _match(_basis(0.05), _basis(6.2), ratio=2.0)
    assert matched.tau[1] == pytest.approx(6.2 - TWO_PI)
    with pytest.raises(MatchingAmbiguityError):
        _match(_basis(0.0), _basis(np.pi), ratio=2.0)


@pytest.mark.slow
def test_champagne_monodromy(champagne, settings):
    report = loop_monodromy(champagne, LoopSpec([0.0, 0.0], 0.05, steps=64), settings)
    assert report.matrix.tolist() == [[1, 1], [0, 1]]
    assert len(report.bases) == 65
    assert max(report.per_point_residuals) < settings.tol_flow
    np.testing.assert_allclose(report.bases[-1].tau - report.bases[0].tau, [0.0, TWO_PI], atol=1e-6)


@pytest.mark.slow
@pytest.mark.parametrize("loop, expected", [
    (dict(center=[0.0, 0.0], radius=0.05, steps=32, orientation=-1), [[1, -1], [0, 1]]),
    (dict(center=[0.0, 0.0], radius=0.05, steps=32, turns=2), [[1, 2], [0, 1]]),
    (dict(center=[0.15, 0.0], radius=0.05, steps=32), [[1, 0], [0, 1]]),
])
def test_champagne_loop_variants(champagne, settings, loop, expected):
    assert loop_monodromy(champagne, LoopSpec(**loop), settings).matrix.tolist() == expected


@pytest.mark.slow
def test_product_with_free_torus(free_torus, settings):
    report = loop_monodromy(free_torus, LoopSpec([0.0, 0.0, 0.3], 0.05, steps=32), settings)
    assert report.matrix.tolist() == [[1, 1, 0], [0, 1, 0], [0, 0, 1]]


def test_loop_dimension_mismatch(free_torus, settings):
    with pytest.raises(ConfigError):
        loop_monodromy(free_torus, LoopSpec([0.0, 0.0], 0.05), settings)


def test_compose_requires_matrices():
    with pytest.raises(ConfigError):
        compose([])


@pytest.fixture(scope="module")
def champagne_loop(champagne, settings):
    return loop_monodromy(champagne, LoopSpec([0.0, 0.0], 0.05, steps=32), settings)


@pytest.mark.slow
@pytest.mark.parametrize("radius, steps", [(0.05, 64), (0.03, 32), (0.08, 32)])
def test_monodromy_is_stable_under_refinement_and_radius(champagne, settings, champagne_loop, radius, steps):
    report = loop_monodromy(champagne, LoopSpec([0.0, 0.0], radius, steps=steps), settings)
    assert report.matrix.tolist() == champagne_loop.matrix.tolist()


@pytest.mark.slow
@pytest.mark.parametrize("change", [[[0, 1], [1, 0]], [[1, 0], [1, 1]], [[2, 1], [1, 1]]])
def test_change_of_basis_conjugates_monodromy(champagne_loop, change):
    p = np.array(change)
    first, last = champagne_loop.bases[0], champagne_loop.bases[-1]
    moved = monodromy_matrix(replace(first, rows=p @ first.rows), replace(last, rows=p @ last.rows))
    assert moved.tolist() == champagne_loop.matrix.conjugate(p).tolist()
