import itertools

import numpy as np
import pytest

from src.analysis.lattice import (
    PRINCIPAL, AnchorPolicy, LogBranch, PeriodBasis, align_basis, build_period_basis,
    inside_model_return, joint_closure_residual, period_grid, project_to_leaf, regular_value,
)
from src.engine.errors import (
    BranchCutError, ConfigError, HorizonExceededError, NotRegularError,
)

TWO_PI = 2.0 * np.pi


def _distance_to_lattice(x, period=TWO_PI):
    return abs(x - period * np.round(x / period))


def test_inside_model_return_matches_direct_formula(rng):
    for _ in range(100):
        w = complex(*rng.uniform(-1.0, 1.0, 2))
        epsilon = rng.uniform(0.1, 1.0)
        expected = 2.0 * np.log(epsilon) - np.log(abs(w)) + 1j * np.angle(w)
        assert abs(inside_model_return(w, epsilon) - expected) < 1e-14


def test_inside_model_return_rejects_critical_value():
    with pytest.raises(NotRegularError):
        inside_model_return(0j, 0.5)


def test_branch_cut():
    with pytest.raises(BranchCutError):
        PRINCIPAL.log(-1.0 + 0j)
    with pytest.raises(BranchCutError):
        LogBranch(np.pi / 2).log(2j)
    assert LogBranch(np.pi / 2).arg(-1.0) == pytest.approx(-np.pi)
    assert PRINCIPAL.arg(1j) == pytest.approx(np.pi / 2)
    assert LogBranch(np.pi / 2).log(-1.0 + 0j) == pytest.approx(complex(0.0, -np.pi))


def test_regular_value_validation():
    assert regular_value([0.05, 0.02]).w == complex(0.05, 0.02)
    np.testing.assert_array_equal(regular_value([0.05, 0.02, 0.3]).tail, [0.3])
    with pytest.raises(ConfigError):
        regular_value([np.inf, 0.0])


def test_project_to_leaf(champagne, settings):
    seed = champagne.leaf_seed(np.array([0.05, 0.02])) + np.array([0.01, -0.02, 0.005, 0.0])
    p = project_to_leaf(champagne, seed, [0.05, 0.02], settings)
    np.testing.assert_allclose(champagne.values(p), [0.05, 0.02], atol=settings.tol_leaf)


def test_champagne_basis(champagne_basis, settings):
    assert champagne_basis.generator == 0
    assert champagne_basis.residual < settings.tol_flow
    np.testing.assert_allclose(champagne_basis.rows[1], [0.0, TWO_PI])
    assert champagne_basis.tau[0] > 0.0
    assert np.isnan(champagne_basis.periods()[0])
    assert champagne_basis.periods()[1] == pytest.approx(TWO_PI)


@pytest.mark.slow
def test_integer_combinations_close(champagne, champagne_basis, settings):
    for m in itertools.product(range(-2, 3), repeat=2):
        bound = settings.tol_flow * (1 + sum(map(abs, m)))
        assert joint_closure_residual(champagne, champagne_basis, m, settings) < bound


def test_critical_value_is_rejected(champagne, settings):
    with pytest.raises(NotRegularError):
        build_period_basis(champagne, [0.0, 0.0], settings=settings)


def test_dimension_mismatch(champagne, settings):
    with pytest.raises(ConfigError):
        build_period_basis(champagne, [0.05], settings=settings)


def test_non_compact_model_fails(ff_model, settings):
    with pytest.raises(HorizonExceededError):
        build_period_basis(ff_model, [0.3, 0.1], settings=settings)


def test_oscillator_has_only_period_rows(oscillator, settings):
    basis = build_period_basis(oscillator, [0.5], settings=settings)
    np.testing.assert_allclose(basis.rows, [[TWO_PI]])
    assert basis.hit_point is None


def test_anchor_policies_agree(champagne, settings):
    values = [[0.05, 0.02], [0.06, 0.02], [0.07, 0.02]]
    chained = period_grid(champagne, values, AnchorPolicy.CONTINUATION, settings)
    seeded = period_grid(champagne, values, AnchorPolicy.SEED, settings)
    for a, b in zip(chained, seeded):
        assert a.ok and b.ok
        np.testing.assert_allclose(align_basis(a.basis, b.basis).rows, b.basis.rows, atol=1e-6)


def test_grid_records_failures(champagne, settings):
    entries = period_grid(champagne, [[0.05, 0.02], [0.0, 0.0]], settings=settings)
    assert entries[0].ok
    assert not entries[1].ok
    assert isinstance(entries[1].error, NotRegularError)


def test_align_basis_shifts_by_periods():
    def basis(shift):
        rows = np.array([[1.5, shift], [0.0, TWO_PI]])
        return PeriodBasis(at=regular_value([0.05, 0.02]), rows=rows, anchor=np.zeros(4), residuals=np.zeros(2))

    aligned = align_basis(basis(6.0), basis(0.0))
    assert aligned.rows[0, 1] == pytest.approx(6.0 - TWO_PI)
    assert aligned.rows[0, 0] == 1.5


def test_free_torus_angle_time(free_torus, settings):
    basis = build_period_basis(free_torus, [0.05, 0.02, 0.3], settings=settings)
    assert basis.rows.shape == (3, 3)
    assert _distance_to_lattice(basis.tau[2]) < 1e-6
    np.testing.assert_allclose(basis.rows[2], [0.0, 0.0, TWO_PI])
