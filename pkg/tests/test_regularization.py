from dataclasses import replace

import numpy as np
import pytest

from src.analysis.lattice import PeriodBasis, build_period_basis, regular_value
from src.analysis.regularization import (
    RaySamples, SField, SigmaGrid, action_gradient, action_integral, closedness_defect, closedness_ratio,
    integrate_S, monomials, refine_axes, regularized_action_offsets, sigma_from_periods, sigma_grid,
    sigma_ray, taylor_fit,
)
from src.engine.errors import (
    ClosednessError, ConfigError, GridTooSmallError, IllConditionedFitError, WindingError,
)

TWO_PI = 2.0 * np.pi
AXES = [np.linspace(0.04, 0.08, 5), np.linspace(-0.02, 0.02, 5)]
REGION = [np.linspace(0.02, 0.1, 9), np.linspace(-0.04, 0.04, 9)]


def _field(fn, axes=AXES):
    v1, v2 = np.meshgrid(*axes, indexing='ij')
    sigma = np.stack(fn(v1, v2), axis=-1)
    return SigmaGrid.from_values(axes, sigma)


def _ray_to(grid, sigma, radii=(0.005, 0.01, 0.02)):
    g0 = grid.values[0, 0]
    angle = np.arctan2(g0[1], g0[0])
    return RaySamples.from_values(angle, radii, [sigma] * len(radii))


def _s_field(fn, axes=AXES):
    v1, v2 = np.meshgrid(*axes, indexing='ij')
    return SField(axes=[np.asarray(a) for a in axes], values=fn(v1, v2), nodes=np.stack([v1, v2], axis=-1),
                  components=(0, 1), base_value=0.0, path_residual=0.0, sigma0=np.zeros(2))


def test_sigma_from_periods():
    basis = PeriodBasis(at=regular_value([0.05, 0.02]), rows=np.array([[3.0, 1.0], [0.0, TWO_PI]]),
                        anchor=np.zeros(4), residuals=np.zeros(2))
    sample = sigma_from_periods(basis)
    w = complex(0.05, 0.02)
    assert sample.sigma[0] == pytest.approx(3.0 + np.log(abs(w)))
    assert sample.sigma[1] == pytest.approx((1.0 - np.angle(w)) % TWO_PI)
    np.testing.assert_array_equal(sample.tau, [3.0, 1.0])


def test_closed_form_has_no_defect():
    grid = _field(lambda v1, v2: (2.0 * v1 * v2, v1 ** 2))
    assert closedness_defect(grid) < 1e-12


def test_non_closed_form_defect():
    grid = _field(lambda v1, v2: (v2, np.zeros_like(v1)))
    assert closedness_defect(grid) == pytest.approx(1.0)


def test_grid_too_small():
    grid = _field(lambda v1, v2: (v1, v2), axes=[np.array([0.04, 0.08]), np.linspace(-0.02, 0.02, 5)])
    with pytest.raises(GridTooSmallError):
        closedness_defect(grid)


def test_refine_axes():
    fine = refine_axes([np.linspace(0.0, 1.0, 3), [0.0, 0.5]])
    np.testing.assert_allclose(fine[0], [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(fine[1], [0.0, 0.25, 0.5])


def test_closedness_ratio_of_second_order_error():
    def exact_form(v1, v2):
        return 4.0 * v1 ** 3 * v2, v1 ** 4

    coarse = _field(exact_form, axes=REGION)
    fine = _field(exact_form, axes=refine_axes(REGION))
    assert closedness_defect(fine, stride=2) < closedness_defect(fine)
    assert closedness_ratio(coarse, fine) == pytest.approx(4.0, rel=1e-6)
    with pytest.raises(ConfigError):
        closedness_ratio(coarse, coarse)


def test_integrate_exact_differential():
    grid = _field(lambda v1, v2: (np.ones_like(v1), np.zeros_like(v1)))
    field = integrate_S(grid, _ray_to(grid, [1.0, 0.0]))
    v1 = grid.values[..., 0]
    np.testing.assert_allclose(field.values, v1, atol=1e-14)
    assert field.base_value == pytest.approx(0.04)
    assert field.path_residual < 1e-14
    v, s = field.items()[0]
    np.testing.assert_allclose(v.v, [0.04, -0.02])
    assert s == pytest.approx(0.04)


def test_integrate_rejects_grid_across_cut():
    axes = [np.linspace(-0.08, -0.04, 5), np.linspace(-0.02, 0.02, 5)]
    grid = _field(lambda v1, v2: (np.ones_like(v1), np.zeros_like(v1)), axes=axes)
    with pytest.raises(WindingError):
        integrate_S(grid, RaySamples.from_values(np.pi, [0.005, 0.01], [[1.0, 0.0]] * 2))


def test_integrate_rejects_misdirected_ray():
    grid = _field(lambda v1, v2: (np.ones_like(v1), np.zeros_like(v1)))
    with pytest.raises(ConfigError):
        integrate_S(grid, RaySamples.from_values(0.0, [0.005, 0.01], [[1.0, 0.0]] * 2))
    with pytest.raises(ConfigError):
        integrate_S(grid, _ray_to(grid, [1.0, 0.0], radii=(0.01, 0.05)))


def test_integrate_detects_path_dependence():
    grid = _field(lambda v1, v2: (v2, np.zeros_like(v1)))
    with pytest.raises(ClosednessError):
        integrate_S(grid, _ray_to(grid, [-0.02, 0.0]))


def test_monomials():
    assert monomials(0) == []
    assert monomials(2) == [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert len(monomials(4)) == 14


def test_taylor_fit_recovers_polynomial():
    fit = taylor_fit(_s_field(lambda v1, v2: v1 ** 2 + 3.0 * v1 * v2), 2)
    assert fit.coefficients[(2, 0)] == pytest.approx(1.0, abs=1e-8)
    assert fit.coefficients[(1, 1)] == pytest.approx(3.0, abs=1e-8)
    assert fit.coefficients[(1, 0)] == pytest.approx(0.0, abs=1e-8)
    assert fit.derivatives[(2, 0)] == pytest.approx(2.0, abs=1e-7)
    assert fit.residual < 1e-12


def test_taylor_fit_degree_zero():
    fit = taylor_fit(_s_field(lambda v1, v2: np.full_like(v1, 2.0)), 0)
    assert fit.coefficients == {}
    assert fit.residual == pytest.approx(2.0)


def test_taylor_fit_on_single_column_is_ill_conditioned():
    axes = [np.array([0.05]), np.linspace(-0.02, 0.02, 5)]
    with pytest.raises(IllConditionedFitError):
        taylor_fit(_s_field(lambda v1, v2: v2, axes=axes), 2)


def test_richardson_limit():
    radii = [0.04, 0.01, 0.02]
    sigma = [[1.0 + 3.0 * r, -2.0 * r] for r in radii]
    ray = RaySamples.from_values(0.3, radii, sigma)
    np.testing.assert_array_equal(ray.radii, [0.01, 0.02, 0.04])
    np.testing.assert_allclose(ray.richardson_limit(), [1.0, 0.0], atol=1e-14)
    uneven = RaySamples.from_values(0.3, [0.01, 0.03], [[1.03, 0.0], [1.09, 0.0]])
    assert uneven.richardson_limit()[0] == pytest.approx(1.0)


def test_cauchy_ratio():
    radii = [0.01, 0.02, 0.04, 0.08]
    linear = RaySamples.from_values(0.3, radii, [[r, 0.0] for r in radii])
    assert linear.cauchy_ratio(0) == pytest.approx(0.5)
    assert linear.cauchy_ratio(1) == 0.0


def test_oscillator_action(oscillator, settings):
    basis = build_period_basis(oscillator, [0.5], settings=settings)
    assert action_integral(oscillator, basis, settings) == pytest.approx(np.pi, rel=1e-8)
    result = action_gradient(oscillator, [0.5], settings=settings)
    assert result.gradient[0] == pytest.approx(TWO_PI, rel=1e-6)
    np.testing.assert_allclose(result.tau, [TWO_PI])


@pytest.mark.slow
def test_action_gradient_is_tau(champagne, settings, rng):
    for _ in range(10):
        radius, angle = rng.uniform(0.03, 0.1), rng.uniform(0.0, TWO_PI)
        basis = build_period_basis(champagne, [radius * np.cos(angle), radius * np.sin(angle)], settings=settings)
        if basis.tau[1] < np.pi:
            rows = basis.rows.copy()
            rows[0, 1] += TWO_PI
            basis = replace(basis, rows=rows)
        result = action_gradient(champagne, basis.at.v, settings=settings, basis=basis)
        np.testing.assert_allclose(result.gradient, result.tau, rtol=1e-3, atol=0.0)


@pytest.mark.slow
def test_sigma_is_closed_on_champagne_grid(normalized, precise):
    coarse = sigma_grid(normalized, REGION, settings=precise)
    assert coarse.sigma.shape == (9, 9, 2)
    assert closedness_defect(coarse) < 1e-3
    fine = sigma_grid(normalized, refine_axes(REGION), settings=precise)
    assert fine.sigma.shape == (17, 17, 2)
    assert closedness_ratio(coarse, fine) >= 3.5


@pytest.mark.slow
def test_sigma_extends_continuously_to_origin(normalized, settings):
    radii = 0.1 * 2.0 ** -np.arange(6)
    limits = []
    for k in range(8):
        ray = sigma_ray(normalized, (k + 0.5) * np.pi / 4.0, radii, settings=settings)
        assert ray.cauchy_ratio(0) <= 0.6
        assert ray.cauchy_ratio(1) <= 0.6
        limits.append(ray.richardson_limit())
    limits = np.array(limits)
    assert np.ptp(limits[:, 0]) < 1e-2
    second = np.angle(np.exp(1j * (limits[:, 1] - limits[0, 1])))
    assert np.ptp(second) < 1e-2


@pytest.mark.slow
def test_sigma_first_component_is_even_in_j(champagne, settings):
    for h, j in ([0.05, 0.02], [0.03, 0.06]):
        upper = sigma_from_periods(build_period_basis(champagne, [h, j], settings=settings))
        lower = sigma_from_periods(build_period_basis(champagne, [h, -j], settings=settings))
        assert upper.sigma[0] == pytest.approx(lower.sigma[0], abs=1e-6)
        assert upper.tau[0] == pytest.approx(lower.tau[0], abs=1e-6)


@pytest.mark.slow
def test_free_torus_sigma_is_trivial(free_torus, settings):
    axes = [np.linspace(0.04, 0.06, 3), np.linspace(-0.01, 0.01, 3)]
    grid = sigma_grid(free_torus, axes, settings=settings, tail=[0.3])
    third = grid.sigma[..., 2]
    assert np.max(np.abs(third - TWO_PI * np.round(third / TWO_PI))) < 1e-6


@pytest.mark.slow
def test_regularized_action_is_constant(normalized, settings):
    grid = sigma_grid(normalized, AXES, settings=settings)
    g0 = grid.values[0, 0]
    ray = sigma_ray(normalized, np.arctan2(g0[1], g0[0]), [0.0025, 0.005, 0.01, 0.02], settings=settings)
    field = integrate_S(grid, ray, settings)
    assert field.path_residual < settings.tol_path
    offsets = regularized_action_offsets(normalized, field, settings)
    assert offsets.offsets.shape == (5, 5)
    assert offsets.spread < 1e-3
    assert taylor_fit(field, 3, settings).residual <= taylor_fit(field, 1, settings).residual
