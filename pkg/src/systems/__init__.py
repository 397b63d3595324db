"""
系统库模块。
提供 Williamson 二次模型、香槟瓶系统及其组合与重参数化。
"""

from src.systems.models import BUILTIN_SYSTEMS, BlockKind, BlockSpec, q_model, champagne_bottle
from src.systems.loader import resolve_system

__all__ = [
    'BUILTIN_SYSTEMS',
    'BlockKind',
    'BlockSpec',
    'q_model',
    'champagne_bottle',
    'resolve_system',
]
