"""
工具模块。
提供日志、配置等通用工具。
"""

from src.utils.logger import get_logger
from src.utils.config import load_config, get_settings

__all__ = ['get_logger', 'load_config', 'get_settings']
