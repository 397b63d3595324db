"""
测试公共夹具：固定种子的随机数生成器、内置系统与缓存的周期基。
"""

import numpy as np
import pytest

from src.analysis.lattice import build_period_basis
from src.systems.models import (
    BlockKind, BlockSpec, champagne_bottle, harmonic_oscillator, normalized_champagne_bottle,
    product_with_free_torus, q_model,
)
from src.utils.config import get_settings

SEED = 20240601


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


@pytest.fixture(scope="session")
def settings():
    return get_settings()


@pytest.fixture(scope="session")
def precise():
    return get_settings({"method": "DOP853", "rel_tol": 1e-13, "abs_tol": 1e-15})


@pytest.fixture(scope="session")
def champagne():
    return champagne_bottle()


@pytest.fixture(scope="session")
def normalized():
    return normalized_champagne_bottle()


@pytest.fixture(scope="session")
def free_torus(champagne):
    return product_with_free_torus(champagne, 1)


@pytest.fixture(scope="session")
def oscillator():
    return harmonic_oscillator()


@pytest.fixture(scope="session")
def ff_model():
    return q_model([BlockSpec(BlockKind.FOCUSFOCUS)])


@pytest.fixture(scope="session")
def champagne_basis(champagne, settings):
    return build_period_basis(champagne, [0.05, 0.02], settings=settings)
