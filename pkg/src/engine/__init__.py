"""
数值核心模块。
提供辛几何基础、哈密顿流积分、临界点分析以及统一的异常层次。
"""

from src.engine.errors import ToolkitError, ConfigError, NumericalError
from src.engine.symplectic import HamiltonianSystem, ScalarField

__all__ = [
    'ToolkitError',
    'ConfigError',
    'NumericalError',
    'HamiltonianSystem',
    'ScalarField',
]
