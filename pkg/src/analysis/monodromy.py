"""
单值性模块。
沿正则值回路同伦延续周期格基，并提取整数单值矩阵。
"""

from typing import List, Optional, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from src.api.models import NumericSettings
from src.analysis.lattice import AnchorPolicy, PeriodBasis, period_grid
from src.engine.errors import (
    ConfigError, MatchingAmbiguityError, NonUnimodularError, RoundingError,
)
from src.engine.symplectic import HamiltonianSystem
from src.utils.config import get_settings
from src.utils.logger import get_logger

logger = get_logger(__name__)

MIN_STEPS = 8


@dataclass
class LoopSpec:
    """(v1, v2) 平面上的圆形回路 center + radius (cos t, sin t)，其余分量固定"""
    center: np.ndarray
    radius: float
    steps: int = 64
    orientation: int = 1
    turns: int = 1

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if self.center.ndim != 1 or self.center.size < 2 or not np.all(np.isfinite(self.center)):
            raise ConfigError(f"回路中心必须是至少两维的有限向量: {self.center}")
        if not self.radius > 0:
            raise ConfigError(f"回路半径必须为正: {self.radius}")
        if self.steps < MIN_STEPS:
            raise ConfigError(f"回路步数至少为 {MIN_STEPS}: {self.steps}")
        if self.orientation not in (1, -1):
            raise ConfigError(f"回路方向必须是 +1 或 -1: {self.orientation}")
        if self.turns < 1:
            raise ConfigError(f"回路圈数至少为 1: {self.turns}")

    @property
    def tail(self) -> np.ndarray:
        return self.center[2:]


def loop_values(loop: LoopSpec) -> List[np.ndarray]:
    """一圈上的 steps 个值，从角度 0 开始按 orientation 方向排列"""
    values = []
    for k in range(loop.steps):
        t = loop.orientation * 2.0 * np.pi * k / loop.steps
        v = loop.center.copy()
        v[0] += loop.radius * np.cos(t)
        v[1] += loop.radius * np.sin(t)
        values.append(v)
    return values


def _match(previous: PeriodBasis, candidate: PeriodBasis, ratio: float) -> PeriodBasis:
    # 对每个周期分量选取使 tau 跳跃最小的整数平移
    rows = candidate.rows.copy()
    gen = candidate.generator
    for j in range(rows.shape[0]):
        if j == gen:
            continue
        period = rows[j, j]
        diff = previous.rows[gen, j] - rows[gen, j]
        shift = np.round(diff / period)
        best = abs(diff - shift * period)
        runner_up = period - best
        if runner_up < ratio * best:
            logger.error(f"{candidate.at.v} 处第 {j} 分量匹配含糊: 最小跳跃 {best:.3e}, 次小 {runner_up:.3e}")
            raise MatchingAmbiguityError(
                f"{candidate.at.v} 处第 {j} 分量匹配含糊: 最小跳跃 {best:.3e}, 次小 {runner_up:.3e}，请增加步数")
        rows[gen, j] += shift * period
    return replace(candidate, rows=rows)


def transport_basis(system: HamiltonianSystem, loop: LoopSpec,
                    settings: Optional[NumericSettings] = None) -> List[PeriodBasis]:
    """
    沿回路延续周期格基

    Args:
        system: 半环面系统
        loop: 回路
        settings: 数值设置（使用 match_ratio 与 workers）

    Returns:
        List[PeriodBasis]: steps * turns + 1 个基，首尾位于同一个值
    """
    settings = settings or get_settings()
    if loop.center.size != system.n:
        logger.error(f"回路中心维数 {loop.center.size} 与分量数 {system.n} 不一致")
        raise ConfigError(f"回路中心维数 {loop.center.size} 与分量数 {system.n} 不一致")
    policy = AnchorPolicy.SEED if settings.workers > 1 else AnchorPolicy.CONTINUATION
    entries = period_grid(system, loop_values(loop), policy, settings)
    failed = [e for e in entries if not e.ok]
    if failed:
        logger.error(f"回路上有 {len(failed)} 个点失败，首个位于 {failed[0].value.v}")
        raise failed[0].error
    bases = [e.basis for e in entries]

    transported = [bases[0]]
    for k in range(1, loop.steps * loop.turns + 1):
        transported.append(_match(transported[-1], bases[k % loop.steps], settings.match_ratio))
    logger.info(f"{system.name} 沿回路延续完成: tau(0) = {transported[0].tau}, tau(end) = {transported[-1].tau}")
    return transported


def is_unipotent_upper(matrix: np.ndarray) -> bool:
    """上三角且对角元全为 1"""
    m = np.asarray(matrix)
    return bool(np.array_equal(np.diag(m), np.ones(m.shape[0])) and np.all(np.tril(m, -1) == 0))


def conjugate(matrix: np.ndarray, change: np.ndarray) -> np.ndarray:
    """P M P^{-1}，P 为整数幺模矩阵"""
    p = np.asarray(change, dtype=float)
    return np.rint(p @ np.asarray(matrix, dtype=float) @ np.linalg.inv(p)).astype(int)


@dataclass
class MonodromyMatrix:
    """整数单值矩阵，last.rows = M first.rows"""
    entries: np.ndarray
    max_rounding_error: float = 0.0

    @property
    def determinant(self) -> int:
        return int(np.rint(np.linalg.det(self.entries)))

    def is_unipotent_upper(self) -> bool:
        return is_unipotent_upper(self.entries)

    def conjugate(self, change: np.ndarray) -> "MonodromyMatrix":
        return MonodromyMatrix(conjugate(self.entries, change), self.max_rounding_error)

    def inverse(self) -> "MonodromyMatrix":
        return MonodromyMatrix(np.rint(np.linalg.inv(self.entries)).astype(int), self.max_rounding_error)

    def tolist(self) -> List[List[int]]:
        return self.entries.astype(int).tolist()


def monodromy_matrix(first: PeriodBasis, last: PeriodBasis,
                     settings: Optional[NumericSettings] = None) -> MonodromyMatrix:
    """
    解 last.rows = M first.rows 并取整

    Args:
        first: 回路起点的基
        last: 延续一圈后的基
        settings: 数值设置（使用 max_rounding_error）

    Returns:
        MonodromyMatrix: 行列式为 +-1 的整数矩阵
    """
    settings = settings or get_settings()
    if first.rows.shape != last.rows.shape or not np.allclose(first.at.v, last.at.v, atol=1e-12):
        logger.error(f"首尾基不在同一个值: {first.at.v} != {last.at.v}")
        raise ConfigError(f"首尾基不在同一个值: {first.at.v} != {last.at.v}")
    raw = last.rows @ np.linalg.inv(first.rows)
    entries = np.rint(raw)
    error = float(np.max(np.abs(raw - entries)))
    if error > settings.max_rounding_error:
        logger.error(f"单值矩阵取整误差 {error:.3e} 超过 {settings.max_rounding_error:.1e}")
        raise RoundingError(f"单值矩阵取整误差 {error:.3e} 超过 {settings.max_rounding_error:.1e}: {raw.tolist()}")
    det = int(np.rint(np.linalg.det(entries)))
    if abs(det) != 1:
        logger.error(f"单值矩阵不是幺模矩阵: det = {det}")
        raise NonUnimodularError(f"单值矩阵不是幺模矩阵: det = {det}, M = {entries.tolist()}")
    return MonodromyMatrix(entries.astype(int), error)


@dataclass
class MonodromyReport:
    """回路计算的完整结果"""
    loop: LoopSpec
    matrix: MonodromyMatrix
    bases: List[PeriodBasis] = field(default_factory=list)

    @property
    def per_point_residuals(self) -> List[float]:
        return [b.residual for b in self.bases]


def loop_monodromy(system: HamiltonianSystem, loop: LoopSpec,
                   settings: Optional[NumericSettings] = None) -> MonodromyReport:
    """延续周期基并计算单值矩阵"""
    settings = settings or get_settings()
    bases = transport_basis(system, loop, settings)
    matrix = monodromy_matrix(bases[0], bases[-1], settings)
    logger.info(f"{system.name} 单值矩阵 {matrix.tolist()}, 取整误差 {matrix.max_rounding_error:.3e}")
    return MonodromyReport(loop=loop, matrix=matrix, bases=bases)


def compose(matrices: Sequence[MonodromyMatrix]) -> MonodromyMatrix:
    """依次经过各回路的单值矩阵乘积（后经过的在左）"""
    if not matrices:
        logger.error("compose 至少需要一个单值矩阵")
        raise ConfigError("compose 至少需要一个单值矩阵")
    result = np.eye(matrices[0].entries.shape[0], dtype=int)
    error = 0.0
    for m in matrices:
        result = m.entries @ result
        error = max(error, m.max_rounding_error)
    return MonodromyMatrix(result, error)
