import json

import numpy as np
import pytest

from src.engine.errors import ConfigError, SingularJacobianError
from src.engine.flow import FlowRequest, flow, periodic_flow, unit_vector
from src.engine.symplectic import central_jacobian, integrability_defect
from src.systems.loader import resolve_system
from src.systems.models import (
    BlockKind, BlockSpec, champagne_normal_form, direct_sum, harmonic_oscillator, linear_reparam,
    q_model, reparametrize,
)


def test_focusfocus_components(ff_model):
    p = ff_model.leaf_seed(np.array([0.3, -0.4]))
    np.testing.assert_allclose(ff_model.values(p), [0.3, -0.4])
    assert ff_model.periodic_flags == (1,)
    assert ff_model.generators == [0]


@pytest.mark.parametrize("kinds, period", [
    ([BlockKind.FOCUSFOCUS], 2.0 * np.pi),
    ([BlockKind.ELLIPTIC], np.pi),
    ([BlockKind.TRANSVERSE], 2.0 * np.pi),
])
def test_closed_form_periodic_flow_matches_integration(kinds, period, settings, rng):
    system = q_model([BlockSpec(k) for k in kinds])
    index = system.periodic_flags[0]
    assert system.period(index) == pytest.approx(period)
    for _ in range(3):
        p = rng.uniform(-1.0, 1.0, system.dim)
        t = rng.uniform(0.0, 5.0)
        exact = periodic_flow(system, index, t, p)
        numeric = flow(system, FlowRequest(unit_vector(system.n, index), p, t), settings)
        np.testing.assert_allclose(numeric, exact, atol=1e-8)


def test_q_model_orders_blocks():
    system = q_model([BlockSpec(BlockKind.TRANSVERSE), BlockSpec(BlockKind.ELLIPTIC, 2)])
    assert system.name == "q_model:elliptic,elliptic,transverse"
    assert system.n == 3
    assert system.periods == {0: np.pi, 1: np.pi, 2: 2.0 * np.pi}
    assert system.angle_indices == (2,)


def test_q_model_rejects_empty_blocks():
    with pytest.raises(ConfigError):
        q_model([])
    with pytest.raises(ConfigError):
        BlockSpec(BlockKind.ELLIPTIC, -1)


def test_direct_sum_is_integrable(ff_model, rng):
    system = direct_sum(ff_model, harmonic_oscillator())
    assert system.n == 3
    assert system.periodic_flags == (1, 2)
    assert integrability_defect(system, rng.uniform(-1.0, 1.0, size=(10, 6))) < 1e-12


def test_champagne_leaf_seed(champagne):
    for v in ([0.05, 0.02], [-0.1, 0.0], [0.2, -0.05]):
        np.testing.assert_allclose(champagne.values(champagne.leaf_seed(np.array(v))), v, atol=1e-14)
    np.testing.assert_allclose(champagne.values(np.zeros(4)), [0.0, 0.0])
    assert champagne.is_critical_value([0.0, 0.0])
    assert not champagne.is_critical_value([0.05, 0.0])


def test_champagne_normal_form_inverse(rng):
    g = champagne_normal_form()
    for u in rng.uniform(-0.1, 0.1, size=(10, 2)):
        np.testing.assert_allclose(g.forward(g.inverse(u)), u, atol=1e-14)
    np.testing.assert_allclose(g.jacobian(np.zeros(2)), [[1.0 / np.sqrt(2.0), 0.0], [0.0, 1.0]])


def test_champagne_normal_form_matches_quartic_terms(rng):
    g = champagne_normal_form()
    for v in rng.uniform(-0.05, 0.05, size=(10, 2)):
        quartic = 2.0 / 3.0 * (np.sqrt(2.0 + 3.0 * v[0] - 0.75 * v[1] ** 2) - np.sqrt(2.0))
        assert abs(g.forward(v)[0] - quartic) < 10.0 * np.linalg.norm(v) ** 3


def test_champagne_normal_form_derivatives(rng):
    g = champagne_normal_form()
    for v in rng.uniform(-0.1, 0.1, size=(5, 2)):
        np.testing.assert_allclose(g.jacobian(v), central_jacobian(g.forward, v), atol=1e-8)
        np.testing.assert_allclose(g.second_derivatives(v), central_jacobian(g.jacobian, v), atol=1e-6)


def test_champagne_normal_form_domain():
    with pytest.raises(ConfigError):
        champagne_normal_form().forward(np.array([0.3, 0.0]))


def test_normalized_champagne(normalized, rng):
    assert normalized.periodic_flags == (1,)
    for v in rng.uniform(-0.05, 0.05, size=(5, 2)):
        p = normalized.leaf_seed(v)
        np.testing.assert_allclose(normalized.values(p), v, atol=1e-12)
    assert integrability_defect(normalized, rng.uniform(-0.3, 0.3, size=(5, 4))) < 1e-10


def test_reparametrize_rejects_singular_map(champagne):
    with pytest.raises(SingularJacobianError):
        reparametrize(champagne, linear_reparam([[1.0, 0.0], [0.0, 0.0]]))


def test_reparametrize_keeps_only_preserved_periods(champagne):
    mixed = reparametrize(champagne, linear_reparam([[1.0, 0.5], [0.2, 1.0]]))
    assert mixed.periodic_flags == ()
    kept = reparametrize(champagne, linear_reparam([[2.0, 0.5], [0.0, 1.0]]))
    assert kept.periodic_flags == (1,)


def test_free_torus_product(free_torus):
    assert free_torus.n == 3
    assert free_torus.periodic_flags == (1, 2)
    assert free_torus.angle_indices == (2,)
    p = free_torus.leaf_seed(np.array([0.05, 0.02, 0.3]))
    np.testing.assert_allclose(free_torus.values(p), [0.05, 0.02, 0.3], atol=1e-14)


def test_resolve_builtin_names():
    assert resolve_system("champagne_bottle").name == "champagne_bottle"
    assert resolve_system("q_model:focusfocus,transverse").n == 3
    with pytest.raises(ConfigError):
        resolve_system("q_model:parabolic")
    with pytest.raises(ConfigError):
        resolve_system("no_such_system")


def test_resolve_json_spec(tmp_path):
    spec = {
        "type": "reparam",
        "g": {"kind": "linear", "matrix": [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]},
        "base": {"type": "product", "k": 1, "base": {"type": "champagne_bottle"}},
    }
    path = tmp_path / "system.json"
    path.write_text(json.dumps(spec))
    system = resolve_system(str(path))
    assert system.n == 3
    assert system.periodic_flags == (1, 2)


def test_resolve_malformed_spec(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        resolve_system(str(bad))
    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({"type": "product", "k": 1}))
    with pytest.raises(ConfigError):
        resolve_system(str(missing))
