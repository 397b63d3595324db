"""
周期格模块。
在正则值处构造周期格基：返回时间行 tau 与固定的周期行，并提供模型内部的解析返回公式。
"""

from typing import List, Optional, Sequence, Union
from dataclasses import dataclass, replace
from concurrent.futures import ThreadPoolExecutor
from enum import Enum

import numpy as np

from src.api.models import NumericSettings
from src.engine.errors import (
    BranchCutError, ConfigError, NotRegularError, NumericalError, OrbitClosureError,
)
from src.engine.flow import (
    close_orbit_times, first_hit_torus_orbit, joint_flow, orbit_cloud, orbit_distance,
)
from src.engine.critical import rank_dF
from src.engine.symplectic import HamiltonianSystem
from src.utils.config import get_settings
from src.utils.logger import get_logger

logger = get_logger(__name__)

MAX_PROJECT_ITER = 60


class AnchorPolicy(Enum):
    """网格锚点的选取方式"""
    CONTINUATION = "continuation"   # 用前一个点的锚点作为初值
    SEED = "seed"                   # 每个值独立使用系统的叶初值


@dataclass(frozen=True)
class LogBranch:
    """复对数的一个分支，切割沿方向 cut_angle 的射线"""
    cut_angle: float = np.pi

    @property
    def principal(self) -> bool:
        return self.cut_angle == np.pi

    def on_cut(self, z: complex, tol: float = 1e-12) -> bool:
        if z == 0:
            return True
        offset = (np.angle(z) - self.cut_angle + np.pi) % (2.0 * np.pi) - np.pi
        return abs(offset) < tol

    def arg(self, z: complex) -> float:
        """取值于 (cut - 2pi, cut] 的辐角"""
        if self.principal:
            return float(np.angle(z))
        return float(self.cut_angle - (self.cut_angle - np.angle(z)) % (2.0 * np.pi))

    def log(self, z: complex) -> complex:
        if z == 0:
            logger.error("对数在 0 处无定义")
            raise BranchCutError("对数在 0 处无定义（临界值）")
        if self.on_cut(z):
            logger.error(f"{z} 落在分支切割 {self.cut_angle} 上")
            raise BranchCutError(f"{z} 落在分支切割 {self.cut_angle} 上")
        if self.principal:
            return complex(np.log(complex(z)))
        return complex(np.log(abs(z)), self.arg(z))


PRINCIPAL = LogBranch()


@dataclass(frozen=True, eq=False)
class RegularValue:
    """动量映射的正则值 v，w = v1 + i v2"""
    v: np.ndarray

    @property
    def w(self) -> complex:
        return complex(self.v[0], self.v[1] if self.v.size > 1 else 0.0)

    @property
    def tail(self) -> np.ndarray:
        return self.v[2:]


def regular_value(v: Union[Sequence[float], RegularValue]) -> RegularValue:
    if isinstance(v, RegularValue):
        return v
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ConfigError(f"正则值必须是有限实数向量: {v}")
    return RegularValue(arr)


@dataclass(eq=False)
class PeriodBasis:
    """周期格基：第 gen 行为 tau，其余行为 周期 * e_j"""
    at: RegularValue
    rows: np.ndarray
    anchor: np.ndarray
    residuals: np.ndarray
    generator: int = 0
    hit_point: Optional[np.ndarray] = None

    @property
    def tau(self) -> np.ndarray:
        return self.rows[self.generator]

    @property
    def residual(self) -> float:
        return float(np.max(self.residuals))

    def periods(self) -> np.ndarray:
        """各周期行的对角元，生成元处为 nan"""
        out = np.diag(self.rows).astype(float).copy()
        out[self.generator] = np.nan
        return out


@dataclass
class GridEntry:
    """网格中一个值的计算结果，失败时 basis 为 None"""
    value: RegularValue
    basis: Optional[PeriodBasis] = None
    error: Optional[NumericalError] = None

    @property
    def ok(self) -> bool:
        return self.basis is not None


def inside_model_return(w: complex, epsilon: float, branch: LogBranch = PRINCIPAL) -> complex:
    """
    模型内部从截面 B 回到 A 的时间 tau_1 + i tau_2 = ln(eps^2) - ln(conj(w))

    Args:
        w: v1 + i v2
        epsilon: 截面半径
        branch: 对数分支

    Returns:
        complex: tau_1 + i tau_2
    """
    if w == 0:
        logger.error("w = 0 是临界值")
        raise NotRegularError("w = 0 是临界值")
    return complex(np.log(epsilon * epsilon)) - branch.log(np.conj(complex(w)))


def project_to_leaf(system: HamiltonianSystem, seed: Sequence[float], v: Union[Sequence[float], RegularValue],
                    settings: Optional[NumericSettings] = None) -> np.ndarray:
    """
    带阻尼的 Gauss-Newton，把 seed 投影到叶 F^{-1}(v) 上

    Args:
        system: 可积系统
        seed: 初值
        v: 目标值

    Returns:
        np.ndarray: 满足 |F(p) - v| < tol_leaf 的点
    """
    settings = settings or get_settings()
    target = regular_value(v).v
    p = system.point(seed)
    r = system.values(p) - target
    norm = float(np.linalg.norm(r))
    for _ in range(MAX_PROJECT_ITER):
        if norm < settings.tol_leaf:
            return p
        delta, *_ = np.linalg.lstsq(system.jacobian(p), -r, rcond=None)
        step = 1.0
        while step > 1e-6:
            trial = p + step * delta
            r_trial = system.values(trial) - target
            if np.linalg.norm(r_trial) < norm:
                break
            step *= 0.5
        else:
            break
        p, r = trial, r_trial
        norm = float(np.linalg.norm(r))
    if norm < settings.tol_leaf:
        return p
    logger.error(f"无法投影到叶 F = {target}: 残差 {norm:.3e}")
    raise NotRegularError(f"无法投影到叶 F = {target}: 残差 {norm:.3e}")


def joint_closure_residual(system: HamiltonianSystem, basis: PeriodBasis, multipliers: Sequence[int],
                           settings: Optional[NumericSettings] = None) -> float:
    """时间向量 sum(m_i rows_i) 的联合流把锚点送回自身的距离"""
    settings = settings or get_settings()
    times = np.asarray(multipliers, dtype=float) @ basis.rows
    end = joint_flow(system, times, basis.anchor, settings)
    return orbit_distance(system, end, basis.anchor)


def align_basis(basis: PeriodBasis, reference: PeriodBasis) -> PeriodBasis:
    """把 tau 的周期分量平移周期的整数倍，使其最接近参考基"""
    rows = basis.rows.copy()
    gen = basis.generator
    for j in range(rows.shape[0]):
        if j == gen:
            continue
        period = rows[j, j]
        rows[gen, j] += period * np.round((reference.rows[gen, j] - rows[gen, j]) / period)
    return replace(basis, rows=rows)


def _generator(system: HamiltonianSystem) -> Optional[int]:
    gens = system.generators
    if len(gens) > 1:
        logger.error(f"{system.name} 有 {len(gens)} 个非周期分量，只支持半环面系统")
        raise ConfigError(f"{system.name} 有 {len(gens)} 个非周期分量，只支持半环面系统")
    return gens[0] if gens else None


def build_period_basis(system: HamiltonianSystem, v: Union[Sequence[float], RegularValue],
                       anchor_seed: Optional[Sequence[float]] = None,
                       settings: Optional[NumericSettings] = None) -> PeriodBasis:
    """
    在正则值 v 处构造周期格基

    tau_1 为 f_1 流首次回到锚点周期轨道的时间，(tau_2, ..., tau_n) 为把命中点送回锚点的周期时间。

    Args:
        system: 半环面系统
        v: 正则值
        anchor_seed: 锚点初值，缺省使用系统的叶初值
        settings: 数值设置

    Returns:
        PeriodBasis: 周期格基
    """
    settings = settings or get_settings()
    value = regular_value(v)
    if value.v.size != system.n:
        logger.error(f"值的维数 {value.v.size} 与分量数 {system.n} 不一致")
        raise ConfigError(f"值的维数 {value.v.size} 与分量数 {system.n} 不一致")
    if system.is_critical_value(value.v):
        logger.error(f"{value.v} 是 {system.name} 的临界值")
        raise NotRegularError(f"{value.v} 不是正则值 ({system.name} 的临界值)")
    if anchor_seed is None:
        if system.leaf_seed is None:
            raise ConfigError(f"{system.name} 没有叶初值，必须给出 anchor_seed")
        anchor_seed = system.leaf_seed(value.v)
    anchor = project_to_leaf(system, anchor_seed, value, settings)
    if rank_dF(system, anchor, settings) != system.n:
        logger.error(f"{value.v} 处的锚点 {anchor} 不是正则点")
        raise NotRegularError(f"{value.v} 不是正则值: 锚点 {anchor} 处 dF 秩不足")

    n = system.n
    gen = _generator(system)
    rows = np.zeros((n, n))
    for j in system.periodic_flags:
        rows[j, j] = system.period(j)
    hit_point = None
    if gen is not None:
        cloud = orbit_cloud(system, anchor, settings)
        hit = first_hit_torus_orbit(system, gen, anchor, anchor, settings=settings, cloud=cloud)
        tau = close_orbit_times(system, hit.point, anchor, settings, cloud=cloud)
        tau[gen] = hit.time
        rows[gen] = tau
        hit_point = hit.point

    residuals = np.array([orbit_distance(system, joint_flow(system, row, anchor, settings), anchor) for row in rows])
    if np.max(residuals) > settings.tol_flow:
        logger.error(f"{value.v} 处周期行闭合残差 {np.max(residuals):.3e} 超过 {settings.tol_flow:.1e}")
        raise OrbitClosureError(f"{value.v} 处周期行闭合残差 {np.max(residuals):.3e} 超过 {settings.tol_flow:.1e}")
    if abs(np.linalg.det(rows)) < 1e-12:
        logger.error(f"{value.v} 处周期行线性相关")
        raise OrbitClosureError(f"{value.v} 处周期行线性相关")
    logger.debug(f"{system.name} 在 {value.v} 处 tau = {rows[gen] if gen is not None else None}")
    return PeriodBasis(at=value, rows=rows, anchor=anchor, residuals=residuals,
                       generator=gen if gen is not None else 0, hit_point=hit_point)


def period_grid(system: HamiltonianSystem, values: Sequence[Union[Sequence[float], RegularValue]],
                policy: AnchorPolicy = AnchorPolicy.CONTINUATION,
                settings: Optional[NumericSettings] = None) -> List[GridEntry]:
    """
    在一组值上计算周期基，单点失败记录在对应条目中而不中断

    Args:
        system: 半环面系统
        values: 值列表
        policy: 锚点选取方式；CONTINUATION 沿列表顺序串行，SEED 可按 workers 并行

    Returns:
        List[GridEntry]: 与 values 一一对应的结果
    """
    settings = settings or get_settings()
    regular = [regular_value(v) for v in values]

    def compute(value: RegularValue, seed: Optional[np.ndarray]) -> GridEntry:
        try:
            return GridEntry(value, basis=build_period_basis(system, value, seed, settings))
        except NumericalError as e:
            logger.warning(f"{system.name} 在 {value.v} 处失败: {type(e).__name__}: {e}")
            return GridEntry(value, error=e)

    if policy is AnchorPolicy.SEED:
        if settings.workers > 1:
            with ThreadPoolExecutor(max_workers=settings.workers) as pool:
                return list(pool.map(lambda val: compute(val, None), regular))
        return [compute(val, None) for val in regular]

    entries: List[GridEntry] = []
    seed = None
    for value in regular:
        entry = compute(value, seed)
        if not entry.ok and seed is not None and not isinstance(entry.error, NotRegularError):
            retry = compute(value, None)
            entry = retry if retry.ok else entry
        if entry.ok:
            seed = entry.basis.anchor
        entries.append(entry)
    ok = sum(e.ok for e in entries)
    logger.info(f"{system.name} 周期网格完成: {ok}/{len(entries)} 成功")
    return entries
