"""
临界点分析模块。
负责定位动量映射的临界点，并通过线性化一般束的特征值结构判定 Williamson 类型。
"""

from typing import List, Optional, Sequence, Tuple
from dataclasses import dataclass, replace
from collections import Counter

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize

from src.api.models import NumericSettings
from src.engine.errors import (
    DegenerateCriticalPointError, EigenSolverError, NoConvergenceError, NonFiniteError,
)
from src.engine.symplectic import HamiltonianSystem, ScalarField, structure_matrix
from src.utils.config import get_settings
from src.utils.logger import get_logger

logger = get_logger(__name__)

MAX_POLISH_ITER = 50


@dataclass(frozen=True)
class WilliamsonIndex:
    """Williamson 指标 (k_e, k_f, k_h, k_x)"""
    k_e: int = 0
    k_f: int = 0
    k_h: int = 0
    k_x: int = 0

    @property
    def n(self) -> int:
        return self.k_e + 2 * self.k_f + self.k_h + self.k_x

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.k_e, self.k_f, self.k_h, self.k_x)


@dataclass
class CriticalPoint:
    """临界点"""
    point: np.ndarray                         # 坐标
    rank: int                                 # dF 的秩
    residual: float                           # 临界条件残差
    wtype: Optional[WilliamsonIndex] = None   # Williamson 指标
    degenerate_flag: bool = False             # 各次试验不一致或分组含糊


def rank_dF(system: HamiltonianSystem, p: Sequence[float], settings: Optional[NumericSettings] = None) -> int:
    """
    dF(p) 的数值秩

    Args:
        system: 可积系统
        p: 相空间点

    Returns:
        int: 同时大于 tol_rank * 最大奇异值 与 tol_crit 的奇异值个数
    """
    settings = settings or get_settings()
    s = np.linalg.svd(system.jacobian(p), compute_uv=False)
    if s.size == 0:
        return 0
    # 低于 tol_crit 的奇异值视为零
    return int(np.sum(s > max(settings.tol_rank * s[0], settings.tol_crit)))


def _criticality(system: HamiltonianSystem, p: np.ndarray, target_rank: int) -> float:
    s = np.linalg.svd(system.jacobian(p), compute_uv=False)
    return float(np.sum(s[target_rank:] ** 2))


def _residual(system: HamiltonianSystem, p: np.ndarray, target_rank: int) -> float:
    s = np.linalg.svd(system.jacobian(p), compute_uv=False)
    return float(s[target_rank]) if target_rank < s.size else 0.0


def _polish(system: HamiltonianSystem, p: np.ndarray, target_rank: int, tol: float) -> np.ndarray:
    # 冻结当前左零空间 c，对 sum(c_i grad f_i) = 0 做 Gauss-Newton
    for _ in range(MAX_POLISH_ITER):
        jac = system.jacobian(p)
        u, s, _ = np.linalg.svd(jac)
        null = u[:, target_rank:]
        if null.shape[1] == 0:
            break
        rows = []
        rhs = []
        for c in null.T:
            rows.append(sum(ci * f.hessian(p) for ci, f in zip(c, system.components)))
            rhs.append(-(c @ jac))
        delta, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
        p = p + delta
        if np.linalg.norm(delta) < 1e-15 * (1.0 + np.linalg.norm(p)) or _residual(system, p, target_rank) < 1e-3 * tol:
            break
    return p


def find_critical_point(system: HamiltonianSystem, seed: Sequence[float], target_rank: int,
                        settings: Optional[NumericSettings] = None, max_iter: int = 2000) -> CriticalPoint:
    """
    从 seed 出发寻找秩为 target_rank 的临界点

    先用 BFGS 最小化目标秩以下奇异值的平方和，再用 Gauss-Newton 精化。

    Args:
        system: 可积系统
        seed: 初值
        target_rank: 目标秩
        settings: 数值设置
        max_iter: BFGS 最大迭代次数

    Returns:
        CriticalPoint: 临界点（尚未分类）
    """
    settings = settings or get_settings()
    p0 = system.point(seed)
    if not 0 <= target_rank < system.n:
        logger.error(f"目标秩 {target_rank} 必须在 [0, {system.n}) 内")
        raise NoConvergenceError(f"目标秩 {target_rank} 必须在 [0, {system.n}) 内")

    result = minimize(lambda q: _criticality(system, q, target_rank), p0, method='BFGS',
                      options={'maxiter': max_iter, 'gtol': 1e-14})
    p = _polish(system, np.asarray(result.x, dtype=float), target_rank, settings.tol_crit)
    if not np.all(np.isfinite(p)):
        logger.error(f"临界点搜索出现非有限值: seed={p0}")
        raise NonFiniteError(f"临界点搜索出现非有限值: seed={p0}")
    residual = _residual(system, p, target_rank)
    if residual >= settings.tol_crit:
        logger.error(f"临界点搜索未收敛: 残差 {residual:.3e}, seed={p0}")
        raise NoConvergenceError(f"临界点搜索未收敛: 残差 {residual:.3e}, seed={p0}")
    rank = rank_dF(system, p, settings)
    if rank != target_rank:
        logger.error(f"收敛到错误的秩: {rank} != {target_rank}")
        raise NoConvergenceError(f"收敛到错误的秩: {rank} != {target_rank}")
    logger.info(f"找到临界点 {p}, 秩 {rank}, 残差 {residual:.3e}")
    return CriticalPoint(point=p, rank=rank, residual=residual)


def linearized_pencil(system: HamiltonianSystem, p: Sequence[float], c: Sequence[float]) -> np.ndarray:
    """
    线性化一般束 L(c) = J sum(c_i H[f_i])(p)

    c 应取自 dF(p) 的左零空间，使 p 是 sum(c_i f_i) 的不动点。
    """
    arr = system.point(p)
    hess = sum(ci * f.hessian(arr) for ci, f in zip(c, system.components))
    return structure_matrix(system.n) @ hess


def _classify_spectrum(eigs: np.ndarray, n: int, k_x: int, tol: float) -> Optional[WilliamsonIndex]:
    radius = float(np.max(np.abs(eigs)))
    if radius == 0.0:
        return None
    lam = eigs / radius
    zero = np.abs(lam) < tol
    rest = lam[~zero]
    if int(np.sum(zero)) != 2 * k_x:
        return None
    imaginary = np.abs(rest.real) < tol
    real = np.abs(rest.imag) < tol
    complex_ = ~(imaginary | real)
    n_im, n_re, n_cx = int(np.sum(imaginary)), int(np.sum(real)), int(np.sum(complex_))
    if n_im % 2 or n_re % 2 or n_cx % 4:
        return None
    index = WilliamsonIndex(k_e=n_im // 2, k_f=n_cx // 4, k_h=n_re // 2, k_x=k_x)
    return index if index.n == n else None


def _classify_trials(system: HamiltonianSystem, cp: CriticalPoint, trials: int,
                     settings: NumericSettings) -> Tuple[WilliamsonIndex, bool]:
    p = system.point(cp.point)
    n = system.n
    u, _, _ = np.linalg.svd(system.jacobian(p))
    rank = rank_dF(system, p, settings)
    null = u[:, rank:]
    if null.shape[1] == 0:
        return WilliamsonIndex(k_x=n), False

    votes: List[Optional[WilliamsonIndex]] = []
    for child in np.random.SeedSequence(settings.seed).spawn(trials):
        rng = np.random.default_rng(child)
        weights = rng.standard_normal(null.shape[1])
        c = null @ (weights / np.linalg.norm(weights))
        try:
            eigs = np.linalg.eigvals(linearized_pencil(system, p, c))
        except np.linalg.LinAlgError as e:
            logger.error(f"特征值求解失败: {e}")
            raise EigenSolverError(f"特征值求解失败: {e}") from e
        if not np.all(np.isfinite(eigs)):
            logger.error("特征值含非有限值")
            raise EigenSolverError("特征值含非有限值")
        votes.append(_classify_spectrum(eigs, n, rank, settings.tol_eig))

    valid = [v for v in votes if v is not None]
    if not valid:
        logger.error(f"退化临界点 {p}: 所有 {trials} 次试验都无法分组")
        raise DegenerateCriticalPointError(f"退化临界点 {p}: 所有 {trials} 次试验都无法分组")
    winner, count = Counter(valid).most_common(1)[0]
    degenerate = count != len(votes)
    if degenerate:
        logger.warning(f"Williamson 分类在 {p} 处各次试验不一致: {votes}")
    return winner, degenerate


def williamson_classify(system: HamiltonianSystem, cp: CriticalPoint, trials: Optional[int] = None,
                        settings: Optional[NumericSettings] = None) -> WilliamsonIndex:
    """
    判定临界点的 Williamson 指标

    对 dF 左零空间中的随机单位系数 c 计算 L(c) 的特征值：零特征值对应横截方向，
    纯虚对为椭圆，实对为双曲，四元组 +-a+-ib 为焦点-焦点；多次试验取多数。

    Args:
        system: 可积系统
        cp: 临界点
        trials: 随机抽取次数，缺省取设置中的 trials
        settings: 数值设置

    Returns:
        WilliamsonIndex: 满足 k_e + 2k_f + k_h + k_x = n 的指标
    """
    settings = settings or get_settings()
    index, _ = _classify_trials(system, cp, trials or settings.trials, settings)
    return index


def classify_point(system: HamiltonianSystem, cp: CriticalPoint, trials: Optional[int] = None,
                   settings: Optional[NumericSettings] = None) -> CriticalPoint:
    """分类并返回带指标与退化标记的临界点"""
    settings = settings or get_settings()
    if cp.residual >= settings.tol_crit:
        logger.error(f"临界点残差 {cp.residual:.3e} 超过容差 {settings.tol_crit:.1e}")
        raise NoConvergenceError(f"临界点残差 {cp.residual:.3e} 超过容差 {settings.tol_crit:.1e}")
    index, degenerate = _classify_trials(system, cp, trials or settings.trials, settings)
    logger.info(f"{system.name} 在 {cp.point} 处的 Williamson 指标: {index.as_tuple()}")
    return replace(cp, wtype=index, degenerate_flag=degenerate)


def random_symplectic_matrix(n: int, rng: np.random.Generator, scale: float = 0.5) -> np.ndarray:
    """exp(J A)，A 为随机对称矩阵，结果满足 S^T J S = J"""
    a = rng.standard_normal((2 * n, 2 * n))
    a = 0.5 * (a + a.T)
    a *= scale / max(np.linalg.norm(a, 2), 1e-12)
    return expm(structure_matrix(n) @ a)


def symplectic_transform(system: HamiltonianSystem, matrix: np.ndarray) -> HamiltonianSystem:
    """
    线性辛坐标变换：新分量为 f o S^{-1}

    Args:
        system: 原系统
        matrix: 辛矩阵 S

    Returns:
        HamiltonianSystem: 变换后的系统，不动点 p 变为 S p
    """
    s = np.asarray(matrix, dtype=float)
    s_inv = np.linalg.inv(s)

    def pulled(f: ScalarField) -> ScalarField:
        return ScalarField(
            func=lambda p: f.func(s_inv @ p),
            grad=lambda p: s_inv.T @ f.gradient(s_inv @ p),
            hess=lambda p: s_inv.T @ f.hessian(s_inv @ p) @ s_inv,
            dim=system.dim,
            name=f.name,
        )

    def conjugated(m):
        return lambda p, t: s @ m(s_inv @ np.asarray(p, dtype=float), t)

    if system.angle_indices:
        logger.warning(f"{system.name} 的角坐标在线性变换下不再是坐标轴，忽略角坐标")
    leaf_seed = None
    if system.leaf_seed is not None:
        def leaf_seed(v):
            return s @ system.leaf_seed(v)

    return HamiltonianSystem(
        components=tuple(pulled(f) for f in system.components),
        periodic_flags=system.periodic_flags,
        periods=dict(system.periods),
        angle_indices=(),
        periodic_maps={i: conjugated(m) for i, m in system.periodic_maps.items()},
        leaf_seed=leaf_seed,
        critical_value=system.critical_value,
        name=f"S({system.name})",
    )
