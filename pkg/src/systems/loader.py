"""
系统加载模块。
把内置系统名、q_model:<kinds> 简写或 JSON 描述文件解析为可积系统。
"""

from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from src.api.models import NumericSettings, SystemSpec
from src.engine.errors import ConfigError
from src.engine.symplectic import HamiltonianSystem
from src.systems.models import (
    BUILTIN_SYSTEMS, BlockKind, BlockSpec, champagne_bottle, champagne_normal_form,
    linear_reparam, product_with_free_torus, q_model, reparametrize,
)
from src.utils.config import get_settings
from src.utils.logger import get_logger

logger = get_logger(__name__)

Q_MODEL_PREFIX = "q_model:"


def parse_kinds(text: str) -> list:
    """解析 "focusfocus,transverse" 形式的块列表"""
    blocks = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        try:
            blocks.append(BlockSpec(BlockKind(item)))
        except ValueError as e:
            logger.error(f"未知的块类型: {item}")
            raise ConfigError(f"未知的块类型: {item}，可选 {[k.value for k in BlockKind]}") from e
    return blocks


def build_system(spec: SystemSpec, settings: Optional[NumericSettings] = None) -> HamiltonianSystem:
    """
    由系统描述构造可积系统

    Args:
        spec: 已校验的系统描述
        settings: 数值设置

    Returns:
        HamiltonianSystem: 可积系统
    """
    settings = settings or get_settings()
    if spec.type == "q_model":
        return q_model([BlockSpec(BlockKind(b.kind), b.multiplicity) for b in spec.blocks])
    if spec.type == "champagne_bottle":
        return champagne_bottle()
    if spec.type == "builtin":
        return _builtin(spec.name)
    base = build_system(spec.base, settings)
    if spec.type == "product":
        return product_with_free_torus(base, spec.k)
    if spec.g.kind == "linear":
        if len(spec.g.matrix) != base.n:
            logger.error(f"线性重参数化矩阵维数 {len(spec.g.matrix)} 与分量数 {base.n} 不一致")
            raise ConfigError(f"线性重参数化矩阵维数 {len(spec.g.matrix)} 与分量数 {base.n} 不一致")
        g = linear_reparam(spec.g.matrix)
    else:
        if base.n != 2:
            logger.error(f"champagne_normal_form 只适用于 n = 2 的系统，实际 n = {base.n}")
            raise ConfigError(f"champagne_normal_form 只适用于 n = 2 的系统，实际 n = {base.n}")
        g = champagne_normal_form()
    return reparametrize(base, g, settings)


def _builtin(name: str) -> HamiltonianSystem:
    if name.startswith(Q_MODEL_PREFIX):
        return q_model(parse_kinds(name[len(Q_MODEL_PREFIX):]))
    if name not in BUILTIN_SYSTEMS:
        logger.error(f"未知的内置系统: {name}")
        raise ConfigError(f"未知的内置系统: {name}，可选 {sorted(BUILTIN_SYSTEMS)} 或 q_model:<kinds>")
    return BUILTIN_SYSTEMS[name]()


def resolve_system(name_or_path: str, settings: Optional[NumericSettings] = None) -> HamiltonianSystem:
    """
    解析 --system 参数

    Args:
        name_or_path: 内置系统名、q_model:<kinds> 或 JSON 文件路径

    Returns:
        HamiltonianSystem: 可积系统
    """
    if name_or_path in BUILTIN_SYSTEMS or name_or_path.startswith(Q_MODEL_PREFIX):
        return _builtin(name_or_path)
    path = Path(name_or_path)
    if not path.is_file():
        logger.error(f"系统描述文件不存在: {path}")
        raise ConfigError(f"{name_or_path} 既不是内置系统也不是存在的文件")
    try:
        spec = SystemSpec.model_validate_json(path.read_text(encoding='utf-8'))
    except ValidationError as e:
        logger.error(f"系统描述 {path} 无效: {e}")
        raise ConfigError(f"系统描述 {path} 无效: {e}") from e
    system = build_system(spec, settings)
    logger.info(f"从 {path} 加载系统 {system.name}, n = {system.n}")
    return system
