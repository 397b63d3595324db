"""
作用量正则化模块。
计算正则化 1-形式 sigma，检查其闭性与光滑延拓，积分不变量 S 并拟合其泰勒级数，
以及验证作用量与周期的关系 dA = tau。
"""

from typing import Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass, field, replace
from math import factorial

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_ivp, trapezoid

from src.api.models import NumericSettings
from src.analysis.lattice import (
    PRINCIPAL, AnchorPolicy, LogBranch, PeriodBasis, RegularValue, align_basis,
    build_period_basis, period_grid, regular_value,
)
from src.engine.errors import (
    ClosednessError, ConfigError, GridTooSmallError, IllConditionedFitError,
    NotRegularError, OrbitClosureError, StepSizeUnderflowError, WindingError,
)
from src.engine.flow import orbit_distance
from src.engine.symplectic import HamiltonianSystem
from src.utils.config import get_settings
from src.utils.logger import get_logger

logger = get_logger(__name__)

TWO_PI = 2.0 * np.pi


@dataclass(eq=False)
class SigmaSample:
    """一个正则值处的 sigma，周期分量约化到 [0, 周期)"""
    at: RegularValue
    sigma: np.ndarray
    tau: np.ndarray


def _periodic_components(basis: PeriodBasis) -> List[int]:
    return [j for j in range(basis.rows.shape[0]) if j != basis.generator]


def sigma_from_periods(basis: PeriodBasis, branch: LogBranch = PRINCIPAL) -> SigmaSample:
    """
    sigma_1 = tau_1 + Re ln w, sigma_2 = tau_2 - Im ln w (mod 2pi), sigma_j = tau_j (j >= 3)

    Args:
        basis: 周期格基
        branch: 对数分支

    Returns:
        SigmaSample: sigma 样本
    """
    w = basis.at.w
    if w == 0:
        logger.error("w = 0 是临界值，sigma 无定义")
        raise NotRegularError("w = 0 是临界值，sigma 无定义")
    log_w = branch.log(w)
    tau = basis.tau.copy()
    sigma = tau.copy()
    sigma[0] = tau[0] + log_w.real
    if sigma.size > 1:
        sigma[1] = tau[1] - log_w.imag
    for j in _periodic_components(basis):
        sigma[j] = np.mod(sigma[j], basis.rows[j, j])
    return SigmaSample(at=basis.at, sigma=sigma, tau=tau)


def _lift(values: np.ndarray, period: float) -> np.ndarray:
    # 先沿第 0 轴的首行展开，再逐轴向外延伸
    out = np.array(values, dtype=float)
    d = out.ndim
    for axis in range(d):
        idx = tuple([slice(None)] * (axis + 1) + [0] * (d - axis - 1))
        out[idx] = np.unwrap(out[idx], axis=axis, period=period)
    return out


@dataclass(eq=False)
class SigmaGrid:
    """v 空间矩形网格上的 sigma，周期分量已沿网格连续提升"""
    axes: List[np.ndarray]
    sigma: np.ndarray                        # 形状 (*shape, n)
    values: np.ndarray                       # 形状 (*shape, n)，各节点的 v
    components: Tuple[int, ...] = (0, 1)     # 第 a 个轴对应的 v 分量
    tau: Optional[np.ndarray] = None
    bases: Optional[List[PeriodBasis]] = None
    branch: LogBranch = PRINCIPAL
    periods: Dict[int, float] = field(default_factory=dict)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(ax) for ax in self.axes)

    @classmethod
    def from_values(cls, axes: Sequence[Sequence[float]], sigma: np.ndarray,
                    components: Tuple[int, ...] = (0, 1), branch: LogBranch = PRINCIPAL) -> "SigmaGrid":
        """由已知的 sigma 数组构造网格（不经过周期计算）"""
        axes = [np.asarray(ax, dtype=float) for ax in axes]
        sigma = np.asarray(sigma, dtype=float)
        mesh = np.meshgrid(*axes, indexing='ij')
        values = np.zeros(sigma.shape)
        for a, comp in enumerate(components):
            values[..., comp] = mesh[a]
        return cls(axes=axes, sigma=sigma, values=values, components=components, branch=branch)

    def node(self, index: Tuple[int, ...]) -> np.ndarray:
        return self.values[index]


def _grid_values(axes: List[np.ndarray], components: Tuple[int, ...], tail: Sequence[float], n: int) -> np.ndarray:
    shape = tuple(len(ax) for ax in axes)
    values = np.zeros(shape + (n,))
    others = [i for i in range(n) if i not in components]
    if len(tail) != len(others):
        logger.error(f"固定分量个数 {len(tail)} 与 {others} 不一致")
        raise ConfigError(f"固定分量个数 {len(tail)} 与 {others} 不一致")
    mesh = np.meshgrid(*axes, indexing='ij')
    for a, comp in enumerate(components):
        values[..., comp] = mesh[a]
    for comp, t in zip(others, tail):
        values[..., comp] = t
    return values


def sigma_grid(system: HamiltonianSystem, axes: Sequence[Sequence[float]], branch: LogBranch = PRINCIPAL,
               policy: AnchorPolicy = AnchorPolicy.CONTINUATION, settings: Optional[NumericSettings] = None,
               tail: Sequence[float] = (), components: Tuple[int, ...] = (0, 1)) -> SigmaGrid:
    """
    在矩形网格上计算 sigma 并连续提升周期分量

    Args:
        system: 半环面系统
        axes: 每个网格轴的坐标
        branch: 对数分支
        policy: 锚点选取方式
        settings: 数值设置
        tail: 其余分量的固定值
        components: 网格轴对应的 v 分量

    Returns:
        SigmaGrid: sigma 网格
    """
    settings = settings or get_settings()
    axes = [np.asarray(ax, dtype=float) for ax in axes]
    values = _grid_values(axes, components, tail, system.n)
    shape = values.shape[:-1]
    flat = values.reshape(-1, system.n)
    entries = period_grid(system, list(flat), policy, settings)
    failed = [e for e in entries if not e.ok]
    if failed:
        logger.error(f"sigma 网格有 {len(failed)} 个点失败，首个位于 {failed[0].value.v}")
        raise failed[0].error
    bases = [e.basis for e in entries]
    samples = [sigma_from_periods(b, branch) for b in bases]
    sigma = np.array([s.sigma for s in samples]).reshape(shape + (system.n,))
    tau = np.array([s.tau for s in samples]).reshape(shape + (system.n,))
    periods = {j: float(bases[0].rows[j, j]) for j in _periodic_components(bases[0])}
    for j, period in periods.items():
        sigma[..., j] = _lift(sigma[..., j], period)
        tau[..., j] = _lift(tau[..., j], period)
    logger.info(f"{system.name} sigma 网格完成: shape = {shape}")
    return SigmaGrid(axes=axes, sigma=sigma, values=values, components=tuple(components), tau=tau,
                     bases=bases, branch=branch, periods=periods)


def closedness_defect(grid: SigmaGrid, stride: int = 1) -> float:
    """
    网格内部 |D_a sigma_b - D_b sigma_a| 的最大值（中心差分）

    Args:
        grid: sigma 网格
        stride: 只在下标为 stride 倍数的内部节点上取最大值，
            stride = 2 时即为间距加倍的粗网格的内部节点

    Returns:
        float: 闭性缺陷
    """
    if any(len(ax) < 2 * stride + 1 for ax in grid.axes):
        logger.error(f"网格太小: shape = {grid.shape}, stride = {stride}")
        raise GridTooSmallError(f"网格每个方向至少需要 {2 * stride + 1} 个点: shape = {grid.shape}")
    d = len(grid.axes)
    interior = tuple(slice(stride, -stride, stride) for _ in range(d))
    worst = 0.0
    for a in range(d):
        for b in range(a + 1, d):
            ca, cb = grid.components[a], grid.components[b]
            curl = np.gradient(grid.sigma[..., cb], grid.axes[a], axis=a) - \
                np.gradient(grid.sigma[..., ca], grid.axes[b], axis=b)
            worst = max(worst, float(np.max(np.abs(curl[interior]))))
    return worst


def refine_axes(axes: Sequence[Sequence[float]]) -> List[np.ndarray]:
    """间距减半：在相邻节点之间插入中点"""
    return [np.linspace(ax[0], ax[-1], 2 * len(ax) - 1) for ax in (np.asarray(a, dtype=float) for a in axes)]


def closedness_ratio(coarse: SigmaGrid, fine: SigmaGrid) -> float:
    """
    间距减半后闭性缺陷的缩小倍数，在两个网格共有的粗网格内部节点上比较

    Args:
        coarse: 粗网格
        fine: 由 refine_axes(coarse.axes) 得到的细网格

    Returns:
        float: coarse 缺陷 / fine 缺陷，二阶差分下约为 4
    """
    expected = refine_axes(coarse.axes)
    if len(fine.axes) != len(expected) or not all(
            ax.shape == ex.shape and np.allclose(ax, ex, rtol=0.0, atol=1e-12) for ax, ex in zip(fine.axes, expected)):
        logger.error(f"细网格不是粗网格的加密: {coarse.shape} -> {fine.shape}")
        raise ConfigError(f"细网格不是粗网格的加密: {coarse.shape} -> {fine.shape}")
    fine_defect = closedness_defect(fine, stride=2)
    coarse_defect = closedness_defect(coarse)
    if fine_defect == 0.0:
        return np.inf if coarse_defect > 0.0 else 1.0
    return coarse_defect / fine_defect


@dataclass(eq=False)
class RaySamples:
    """沿射线 r (cos a, sin a) 趋向 0 的 sigma 样本，半径递增排列"""
    angle: float
    radii: np.ndarray
    sigma: np.ndarray
    samples: Optional[List[SigmaSample]] = None

    @classmethod
    def from_values(cls, angle: float, radii: Sequence[float], sigma: Sequence[Sequence[float]]) -> "RaySamples":
        order = np.argsort(radii)
        return cls(angle=float(angle), radii=np.asarray(radii, dtype=float)[order],
                   sigma=np.asarray(sigma, dtype=float)[order])

    def richardson_limit(self) -> np.ndarray:
        """二阶 Richardson 外推 sigma(0) = 2 sigma(r) - sigma(2r)"""
        if self.radii.size < 2:
            raise GridTooSmallError("外推至少需要两个半径")
        r0, r1 = self.radii[0], self.radii[1]
        if np.isclose(r1, 2.0 * r0):
            return 2.0 * self.sigma[0] - self.sigma[1]
        return self.sigma[0] - r0 * (self.sigma[1] - self.sigma[0]) / (r1 - r0)

    def cauchy_ratio(self, component: int = 0, floor: float = 1e-8) -> float:
        """从大到小半径的相邻差之比的最大值，低于噪声下限的差被忽略"""
        values = self.sigma[::-1, component]
        diffs = np.abs(np.diff(values))
        ratios = [diffs[k + 1] / diffs[k] for k in range(diffs.size - 1) if diffs[k] > floor]
        return float(max(ratios)) if ratios else 0.0


def sigma_ray(system: HamiltonianSystem, angle: float, radii: Sequence[float], branch: LogBranch = PRINCIPAL,
              settings: Optional[NumericSettings] = None, tail: Sequence[float] = ()) -> RaySamples:
    """
    沿射线计算 sigma，从外向内延续锚点，周期分量沿射线提升

    Args:
        system: 半环面系统
        angle: 射线方向
        radii: 半径列表
        branch: 对数分支

    Returns:
        RaySamples: 射线样本
    """
    settings = settings or get_settings()
    radii = np.sort(np.asarray(radii, dtype=float))
    values = [np.concatenate([[r * np.cos(angle), r * np.sin(angle)], tail]) for r in radii[::-1]]
    entries = period_grid(system, values, AnchorPolicy.CONTINUATION, settings)
    failed = [e for e in entries if not e.ok]
    if failed:
        raise failed[0].error
    samples = [sigma_from_periods(e.basis, branch) for e in entries][::-1]
    sigma = np.array([s.sigma for s in samples])
    basis = entries[0].basis
    for j in _periodic_components(basis):
        sigma[:, j] = np.unwrap(sigma[:, j], period=basis.rows[j, j])
    return RaySamples(angle=float(angle), radii=radii, sigma=sigma, samples=samples)


@dataclass(eq=False)
class SField:
    """网格上的 S，满足 S(0) = 0"""
    axes: List[np.ndarray]
    values: np.ndarray
    nodes: np.ndarray
    components: Tuple[int, ...]
    base_value: float
    path_residual: float
    sigma0: np.ndarray
    grid: Optional[SigmaGrid] = None

    def items(self) -> List[Tuple[RegularValue, float]]:
        flat_v = self.nodes.reshape(-1, self.nodes.shape[-1])
        return [(regular_value(v), float(s)) for v, s in zip(flat_v, self.values.ravel())]


def _check_winding(grid: SigmaGrid) -> None:
    w = grid.values[..., grid.components[0]] + 1j * grid.values[..., grid.components[1]]
    if np.any(w == 0):
        raise NotRegularError("网格包含 w = 0")
    args = np.vectorize(grid.branch.arg)(w)
    for axis in range(args.ndim):
        if args.shape[axis] > 1 and np.any(np.abs(np.diff(args, axis=axis)) > np.pi):
            logger.error(f"网格沿第 {axis} 轴穿过分支切割 {grid.branch.cut_angle}")
            raise WindingError(f"网格沿第 {axis} 轴穿过分支切割 {grid.branch.cut_angle}")


def _integrate_axes(grid: SigmaGrid, order: Sequence[int]) -> np.ndarray:
    d = len(grid.axes)
    result = np.zeros(grid.shape)
    for step, axis in enumerate(order):
        idx: List = [0] * d
        for a in order[:step + 1]:
            idx[a] = slice(None)
        idx = tuple(idx)
        free = sorted(order[:step + 1])
        pos = free.index(axis)
        line = grid.sigma[idx + (grid.components[axis],)]
        incr = cumulative_trapezoid(line, grid.axes[axis], axis=pos, initial=0)
        start = np.take(result[idx], [0], axis=pos)
        result[idx] = start + incr
    return result


def integrate_S(grid: SigmaGrid, ray: RaySamples, settings: Optional[NumericSettings] = None) -> SField:
    """
    沿从 0 出发的路径积分 sigma 得到 S

    基路径是从 0 到网格首节点的射线段，sigma(0) 由射线样本外推；
    网格内按两种轴顺序做复合梯形积分，两者之差记为路径无关性残差。

    Args:
        grid: sigma 网格
        ray: 指向网格首节点的射线样本
        settings: 数值设置

    Returns:
        SField: S 网格
    """
    settings = settings or get_settings()
    _check_winding(grid)
    d = len(grid.axes)
    origin = (0,) * d
    c0, c1 = grid.components[0], grid.components[1]
    g0 = grid.values[origin]
    radius = float(np.hypot(g0[c0], g0[c1]))
    direction = np.arctan2(g0[c1], g0[c0])
    if abs(np.angle(np.exp(1j * (direction - ray.angle)))) > 1e-9:
        logger.error(f"射线方向 {ray.angle} 不指向网格首节点 {g0}")
        raise ConfigError(f"射线方向 {ray.angle} 不指向网格首节点 {g0}")
    if ray.radii[-1] >= radius:
        raise ConfigError(f"射线半径 {ray.radii[-1]} 必须小于首节点半径 {radius}")
    if grid.branch.on_cut(complex(np.cos(ray.angle), np.sin(ray.angle)), tol=1e-9):
        logger.error(f"基路径沿分支切割 {grid.branch.cut_angle}")
        raise WindingError(f"基路径沿分支切割 {grid.branch.cut_angle}")

    sigma_first = grid.sigma[origin]
    ray_sigma = ray.sigma.copy()
    sigma0 = ray.richardson_limit()
    for j, period in grid.periods.items():
        shift = period * np.round((sigma_first[j] - ray_sigma[-1, j]) / period)
        ray_sigma[:, j] += shift
        sigma0[j] += shift
    samples = np.vstack([sigma0, ray_sigma, sigma_first])
    radii = np.concatenate([[0.0], ray.radii, [radius]])
    integrand = samples[:, c0] * np.cos(ray.angle) + samples[:, c1] * np.sin(ray.angle)
    base = float(trapezoid(integrand, radii))

    forward = _integrate_axes(grid, list(range(d)))
    backward = _integrate_axes(grid, list(range(d))[::-1])
    residual = float(np.max(np.abs(forward - backward)))
    if residual > settings.tol_path:
        logger.error(f"路径无关性残差 {residual:.3e} 超过 {settings.tol_path:.1e}")
        raise ClosednessError(f"路径无关性残差 {residual:.3e} 超过 {settings.tol_path:.1e}")
    logger.info(f"S 积分完成: 基值 {base:.12g}, 路径残差 {residual:.3e}")
    return SField(axes=grid.axes, values=base + forward, nodes=grid.values, components=grid.components,
                  base_value=base, path_residual=residual, sigma0=sigma0, grid=grid)


@dataclass
class TaylorFit:
    """S 的多项式拟合"""
    degree: int
    coefficients: Dict[Tuple[int, int], float]
    residual: float
    condition: float

    @property
    def derivatives(self) -> Dict[Tuple[int, int], float]:
        """偏导数值 c_{j1 j2} j1! j2!"""
        return {k: c * factorial(k[0]) * factorial(k[1]) for k, c in self.coefficients.items()}


def monomials(degree: int) -> List[Tuple[int, int]]:
    return [(a, total - a) for total in range(1, degree + 1) for a in range(total, -1, -1)]


def taylor_fit(field: SField, degree: int, settings: Optional[NumericSettings] = None) -> TaylorFit:
    """
    在 (v1, v2) 上对 S 做总次数不超过 degree 的最小二乘多项式拟合，常数项固定为 0

    Args:
        field: S 网格（固定其余分量）
        degree: 总次数
        settings: 数值设置（使用 fit_cond_max）

    Returns:
        TaylorFit: 系数与均方根残差
    """
    settings = settings or get_settings()
    if len(field.axes) != 2:
        logger.error(f"泰勒拟合需要二维 (v1, v2) 网格，实际维数 {len(field.axes)}")
        raise ConfigError(f"泰勒拟合需要二维 (v1, v2) 网格，实际维数 {len(field.axes)}")
    v1 = field.nodes[..., field.components[0]].ravel()
    v2 = field.nodes[..., field.components[1]].ravel()
    s = field.values.ravel()
    terms = monomials(degree)
    if not terms:
        residual = float(np.sqrt(np.mean(s ** 2)))
        return TaylorFit(degree=degree, coefficients={}, residual=residual, condition=1.0)

    matrix = np.column_stack([v1 ** a * v2 ** b for a, b in terms])
    norms = np.linalg.norm(matrix, axis=0)
    if np.any(norms == 0):
        raise IllConditionedFitError("拟合矩阵含零列")
    scaled = matrix / norms
    condition = float(np.linalg.cond(scaled))
    if not np.isfinite(condition) or condition > settings.fit_cond_max:
        logger.error(f"泰勒拟合矩阵条件数 {condition:.3e} 超过 {settings.fit_cond_max:.1e}")
        raise IllConditionedFitError(f"泰勒拟合矩阵条件数 {condition:.3e} 超过 {settings.fit_cond_max:.1e}")
    solution, *_ = np.linalg.lstsq(scaled, s, rcond=None)
    coeffs = solution / norms
    residual = float(np.sqrt(np.mean((s - matrix @ coeffs) ** 2)))
    logger.info(f"泰勒拟合 degree = {degree}: 残差 {residual:.3e}, 条件数 {condition:.3e}")
    return TaylorFit(degree=degree, coefficients={k: float(c) for k, c in zip(terms, coeffs)},
                     residual=residual, condition=condition)


def action_integral(system: HamiltonianSystem, basis: PeriodBasis, settings: Optional[NumericSettings] = None) -> float:
    """
    沿周期基给出的闭合流字 (先 f_gen 流 tau_gen，再各周期分量流 tau_j) 积分 sum x dxi

    Args:
        system: 半环面系统
        basis: 周期格基（tau 可以是提升后的值）
        settings: 数值设置

    Returns:
        float: 作用量
    """
    settings = settings or get_settings()
    n = system.n
    order = [basis.generator] + [j for j in range(n) if j != basis.generator]
    p = basis.anchor.copy()
    total = 0.0
    for i in order:
        duration = float(basis.tau[i])
        if duration == 0.0:
            continue
        field_i = system.components[i]

        def rhs(t, y, f=field_i):
            g = f.gradient(y[:-1])
            return np.concatenate([-g[n:], g[:n], [y[:n] @ g[:n]]])

        sol = solve_ivp(rhs, (0.0, duration), np.concatenate([p, [0.0]]), method=settings.method,
                        rtol=settings.rel_tol, atol=settings.abs_tol)
        if sol.status == -1:
            logger.error(f"作用量积分失败: {sol.message}")
            raise StepSizeUnderflowError(f"作用量积分失败: {sol.message}")
        p = sol.y[:-1, -1]
        total += float(sol.y[-1, -1])
    closure = orbit_distance(system, p, basis.anchor)
    if closure > settings.tol_flow:
        logger.error(f"作用量回路未闭合: 残差 {closure:.3e}")
        raise OrbitClosureError(f"作用量回路未闭合: 残差 {closure:.3e}")
    return total


@dataclass
class ActionGradient:
    """作用量的有限差分梯度与对应的周期行"""
    action: float
    gradient: np.ndarray
    tau: np.ndarray
    basis: PeriodBasis


def action_gradient(system: HamiltonianSystem, v: Sequence[float], h: float = 1e-3,
                    settings: Optional[NumericSettings] = None, basis: Optional[PeriodBasis] = None) -> ActionGradient:
    """
    中心差分 [A(v + h e_i) - A(v - h e_i)] / 2h，邻近基的 tau 对齐到中心基

    Args:
        system: 半环面系统
        v: 正则值
        h: 差分步长

    Returns:
        ActionGradient: 梯度与 tau
    """
    settings = settings or get_settings()
    center = basis or build_period_basis(system, v, settings=settings)
    action = action_integral(system, center, settings)
    grad = np.zeros(system.n)
    for i in range(system.n):
        values = []
        for sign in (1.0, -1.0):
            shifted = center.at.v.copy()
            shifted[i] += sign * h
            neighbour = build_period_basis(system, shifted, center.anchor, settings)
            values.append(action_integral(system, align_basis(neighbour, center), settings))
        grad[i] = (values[0] - values[1]) / (2.0 * h)
    logger.debug(f"{center.at.v} 处 dA = {grad}, tau = {center.tau}")
    return ActionGradient(action=action, gradient=grad, tau=center.tau.copy(), basis=center)


@dataclass
class RegularizedOffsets:
    """A(v) - [S(v) - Re(w ln w - w)] 在网格上的取值"""
    offsets: np.ndarray
    actions: np.ndarray

    @property
    def spread(self) -> float:
        return float(np.std(self.offsets))

    @property
    def mean(self) -> float:
        return float(np.mean(self.offsets))


def regularized_action_offsets(system: HamiltonianSystem, field: SField,
                               settings: Optional[NumericSettings] = None) -> RegularizedOffsets:
    """
    正则化作用量的常数性检查：各节点的回路使用与 sigma 提升一致的 tau 提升

    Args:
        system: 半环面系统
        field: 由 sigma_grid 得到的 S

    Returns:
        RegularizedOffsets: 偏移量与作用量
    """
    settings = settings or get_settings()
    grid = field.grid
    if grid is None or grid.bases is None:
        raise ConfigError("S 必须由 sigma_grid 计算的网格得到")
    flat_sigma = grid.sigma.reshape(-1, system.n)
    offsets = []
    actions = []
    for basis, sigma, s_value in zip(grid.bases, flat_sigma, field.values.ravel()):
        w = basis.at.w
        log_w = grid.branch.log(w)
        rows = basis.rows.copy()
        gen = basis.generator
        rows[gen, 1] = sigma[1] + log_w.imag
        for j in range(2, system.n):
            if j != gen:
                rows[gen, j] = sigma[j]
        action = action_integral(system, replace(basis, rows=rows), settings)
        actions.append(action)
        offsets.append(action - (s_value - (w * log_w - w).real))
    shape = field.values.shape
    result = RegularizedOffsets(offsets=np.array(offsets).reshape(shape), actions=np.array(actions).reshape(shape))
    logger.info(f"正则化作用量偏移: 均值 {result.mean:.12g}, 标准差 {result.spread:.3e}")
    return result
