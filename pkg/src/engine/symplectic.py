"""
辛几何基础模块。
提供标准辛空间 R^{2n} 上的泊松括号、哈密顿向量场、Hessian 以及数值微分后备实现。

坐标排列为 (x_1, ..., x_n, xi_1, ..., xi_n)。
符号约定：哈密顿向量场 X_f = (-df/dxi, df/dx)，泊松括号 {f, g} = sum(f_x g_xi - f_xi g_x)，
于是 {f, g} 等于 g 沿 X_f 的导数，并且 {x_1, xi_1} = 1。
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field

import numpy as np

from src.engine.errors import DimensionMismatchError, NonFiniteError
from src.utils.logger import get_logger

logger = get_logger(__name__)

EPS = np.finfo(float).eps
# 中心差分步长：截断误差与舍入误差的平衡点
GRAD_STEP = EPS ** (1.0 / 3.0)
HESS_STEP = EPS ** 0.25

PeriodicMap = Callable[[np.ndarray, float], np.ndarray]


def as_phase_vector(p: Sequence[float], dim: Optional[int] = None) -> np.ndarray:
    """
    转换并校验相空间向量

    Args:
        p: 坐标序列
        dim: 期望的维数（2n），为 None 时只检查偶数长度

    Returns:
        np.ndarray: 一维浮点数组
    """
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size % 2 != 0:
        logger.error(f"相空间向量长度必须为偶数: shape={arr.shape}")
        raise DimensionMismatchError(f"相空间向量长度必须为偶数: shape={arr.shape}")
    if dim is not None and arr.size != dim:
        logger.error(f"相空间维数不匹配: 期望 {dim}, 实际 {arr.size}")
        raise DimensionMismatchError(f"相空间维数不匹配: 期望 {dim}, 实际 {arr.size}")
    if not np.all(np.isfinite(arr)):
        logger.error(f"相空间向量含非有限值: {arr}")
        raise NonFiniteError(f"相空间向量含非有限值: {arr}")
    return arr


def structure_matrix(n: int) -> np.ndarray:
    """返回 X_f = J grad f 中的矩阵 J = [[0, -I], [I, 0]]"""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, -eye], [eye, zero]])


def _steps(p: np.ndarray, base: float) -> np.ndarray:
    return base * np.maximum(1.0, np.abs(p))


def central_gradient(func: Callable[[np.ndarray], float], p: np.ndarray) -> np.ndarray:
    """函数值的中心差分梯度"""
    h = _steps(p, GRAD_STEP)
    grad = np.empty_like(p)
    for i in range(p.size):
        step = np.zeros_like(p)
        step[i] = h[i]
        grad[i] = (func(p + step) - func(p - step)) / (2.0 * h[i])
    return grad


def central_jacobian(func: Callable[[np.ndarray], np.ndarray], p: np.ndarray, base: float = GRAD_STEP) -> np.ndarray:
    """向量值函数的中心差分雅可比矩阵，列对应 p 的分量"""
    h = _steps(p, base)
    columns = []
    for i in range(p.size):
        step = np.zeros_like(p)
        step[i] = h[i]
        columns.append((np.asarray(func(p + step)) - np.asarray(func(p - step))) / (2.0 * h[i]))
    return np.stack(columns, axis=-1)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """相空间上的光滑函数，导数可解析给出，缺省时用中心差分"""
    func: Callable[[np.ndarray], float]
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dim: Optional[int] = None
    name: str = "f"

    def _point(self, p: Sequence[float]) -> np.ndarray:
        return as_phase_vector(p, self.dim)

    def evaluate(self, p: Sequence[float]) -> float:
        return float(self.func(self._point(p)))

    def gradient(self, p: Sequence[float]) -> np.ndarray:
        arr = self._point(p)
        if self.grad is not None:
            return np.asarray(self.grad(arr), dtype=float)
        return central_gradient(self.func, arr)

    def hessian(self, p: Sequence[float]) -> np.ndarray:
        arr = self._point(p)
        if self.hess is not None:
            return np.asarray(self.hess(arr), dtype=float)
        # 梯度本身是差分时用更大的外层步长
        base = GRAD_STEP if self.grad is not None else HESS_STEP
        grad = self.grad if self.grad is not None else (lambda q: central_gradient(self.func, q))
        mat = central_jacobian(grad, arr, base)
        return 0.5 * (mat + mat.T)


def quadratic_field(matrix: np.ndarray, name: str = "q") -> ScalarField:
    """
    二次型 f(p) = p^T Q p / 2

    Args:
        matrix: 对称矩阵 Q
        name: 名称

    Returns:
        ScalarField: 带解析梯度与 Hessian 的函数
    """
    q = np.asarray(matrix, dtype=float)
    q = 0.5 * (q + q.T)
    return ScalarField(
        func=lambda p: 0.5 * float(p @ q @ p),
        grad=lambda p: q @ p,
        hess=lambda p: q.copy(),
        dim=q.shape[0],
        name=name,
    )


def linear_field(coefficients: np.ndarray, name: str = "l") -> ScalarField:
    """线性函数 f(p) = a . p"""
    a = np.asarray(coefficients, dtype=float)
    return ScalarField(
        func=lambda p: float(a @ p),
        grad=lambda p: a.copy(),
        hess=lambda p: np.zeros((a.size, a.size)),
        dim=a.size,
        name=name,
    )


@dataclass(frozen=True, eq=False)
class HamiltonianSystem:
    """
    可积哈密顿系统 F = (f_1, ..., f_n)。

    periodic_flags 为生成 T^{n-1} 作用的分量下标（从 0 开始），periods 给出对应周期；
    angle_indices 为自由环面因子的角坐标在相空间向量中的下标；
    periodic_maps 为周期分量流的闭式表达 (p, t) -> p。
    """
    components: Tuple[ScalarField, ...]
    periodic_flags: Tuple[int, ...] = ()
    periods: Dict[int, float] = field(default_factory=dict)
    angle_indices: Tuple[int, ...] = ()
    periodic_maps: Dict[int, PeriodicMap] = field(default_factory=dict)
    leaf_seed: Optional[Callable[[np.ndarray], np.ndarray]] = None
    critical_value: Optional[Callable[[np.ndarray], bool]] = None
    name: str = "system"

    @property
    def n(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def generators(self) -> List[int]:
        """非周期分量的下标"""
        return [i for i in range(self.n) if i not in self.periodic_flags]

    def point(self, p: Sequence[float]) -> np.ndarray:
        return as_phase_vector(p, self.dim)

    def values(self, p: Sequence[float]) -> np.ndarray:
        arr = self.point(p)
        return np.array([f.evaluate(arr) for f in self.components])

    def jacobian(self, p: Sequence[float]) -> np.ndarray:
        """n x 2n 梯度矩阵 dF(p)"""
        arr = self.point(p)
        jac = np.vstack([f.gradient(arr) for f in self.components])
        if not np.all(np.isfinite(jac)):
            logger.error(f"{self.name} 在 {arr} 处梯度非有限")
            raise NonFiniteError(f"{self.name} 在 {arr} 处梯度非有限")
        return jac

    def period(self, index: int) -> float:
        return float(self.periods.get(index, 2.0 * np.pi))

    def is_critical_value(self, v: Sequence[float]) -> bool:
        if self.critical_value is None:
            return False
        return bool(self.critical_value(np.asarray(v, dtype=float)))

    def combined_gradient(self, coefficients: Sequence[float], p: np.ndarray) -> np.ndarray:
        """sum(alpha_i grad f_i)(p)"""
        grad = np.zeros(self.dim)
        for alpha, f in zip(coefficients, self.components):
            if alpha != 0.0:
                grad += alpha * f.gradient(p)
        return grad


def vector_field_from_gradient(grad: np.ndarray) -> np.ndarray:
    """由梯度得到哈密顿向量场 (-g_xi, g_x)"""
    n = grad.size // 2
    return np.concatenate([-grad[n:], grad[:n]])


def poisson_bracket(f: ScalarField, g: ScalarField, p: Sequence[float]) -> float:
    """
    计算泊松括号 {f, g}(p)

    Args:
        f: 第一个函数
        g: 第二个函数
        p: 相空间点

    Returns:
        float: sum_i (df/dx_i dg/dxi_i - df/dxi_i dg/dx_i)
    """
    for h in (f, g):
        if h.dim is not None and len(p) != h.dim:
            logger.error(f"{h.name} 的维数 {h.dim} 与点的维数 {len(p)} 不一致")
            raise DimensionMismatchError(f"{h.name} 的维数 {h.dim} 与点的维数 {len(p)} 不一致")
    arr = as_phase_vector(p)
    n = arr.size // 2
    df = f.gradient(arr)
    dg = g.gradient(arr)
    return float(df[:n] @ dg[n:] - df[n:] @ dg[:n])


def ham_vector_field(f: ScalarField, p: Sequence[float]) -> np.ndarray:
    """
    哈密顿向量场 X_f(p)，满足 iota_X (sum dx ^ dxi) = -df

    Args:
        f: 哈密顿函数
        p: 相空间点

    Returns:
        np.ndarray: 2n 维向量
    """
    grad = f.gradient(p)
    if not np.all(np.isfinite(grad)):
        logger.error(f"{f.name} 在 {p} 处梯度非有限")
        raise NonFiniteError(f"{f.name} 在 {p} 处梯度非有限")
    return vector_field_from_gradient(grad)


def hessian_at(f: ScalarField, p: Sequence[float]) -> np.ndarray:
    """对称 Hessian 矩阵，非有限时报错"""
    mat = f.hessian(p)
    if not np.all(np.isfinite(mat)):
        logger.error(f"{f.name} 在 {p} 处 Hessian 非有限")
        raise NonFiniteError(f"{f.name} 在 {p} 处 Hessian 非有限")
    return mat


def gradient_error(f: ScalarField, points: Sequence[Sequence[float]]) -> float:
    """解析梯度与中心差分梯度的最大相对误差"""
    worst = 0.0
    for p in points:
        arr = as_phase_vector(p, f.dim)
        exact = f.gradient(arr)
        approx = central_gradient(f.func, arr)
        scale = max(1.0, float(np.max(np.abs(exact))))
        worst = max(worst, float(np.max(np.abs(exact - approx))) / scale)
    return worst


def symmetry_error(f: ScalarField, points: Sequence[Sequence[float]]) -> float:
    """Hessian 的最大非对称量"""
    return max(float(np.max(np.abs(m - m.T))) for m in (hessian_at(f, p) for p in points))


def integrability_defect(system: HamiltonianSystem, points: Sequence[Sequence[float]]) -> float:
    """所有分量两两泊松括号在采样点上的最大绝对值"""
    worst = 0.0
    for p in points:
        for i in range(system.n):
            for j in range(i + 1, system.n):
                worst = max(worst, abs(poisson_bracket(system.components[i], system.components[j], p)))
    return worst
