"""
哈密顿流积分模块。
负责联合哈密顿流的数值积分、环面轨道的首次命中检测以及周期分量的闭合时间求解。
"""

from typing import Optional, Sequence, Tuple
from dataclasses import dataclass
import itertools

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import least_squares
from scipy.spatial import cKDTree

from src.api.models import NumericSettings
from src.engine.errors import (
    ConfigError, ConservationError, HorizonExceededError, NonFiniteError,
    OrbitClosureError, RefinementError, StepSizeUnderflowError,
)
from src.engine.symplectic import HamiltonianSystem, vector_field_from_gradient
from src.utils.config import get_settings
from src.utils.logger import get_logger

logger = get_logger(__name__)

# 命中搜索时每段积分的时长
CHUNK_DURATION = 20.0
MAX_REFINE_ITER = 30
MAX_SNAP_ITER = 3
MAX_CONSERVE_SAMPLES = 200


@dataclass(frozen=True, eq=False)
class FlowRequest:
    """积分请求：哈密顿量 sum(alpha_i f_i)、初值与时长"""
    coefficients: Tuple[float, ...]
    start: np.ndarray
    duration: float
    rel_tol: Optional[float] = None
    abs_tol: Optional[float] = None
    check: bool = True

    def __post_init__(self):
        if not np.all(np.isfinite(self.coefficients)) or not np.isfinite(self.duration):
            logger.error(f"积分请求含非有限值: coefficients={self.coefficients}, duration={self.duration}")
            raise NonFiniteError(f"积分请求含非有限值: coefficients={self.coefficients}, duration={self.duration}")


@dataclass
class HitResult:
    """首次命中结果"""
    time: float                 # 命中时间
    point: np.ndarray           # 命中点
    residual: float             # 命中点到目标轨道的距离
    angles: np.ndarray          # 目标轨道上对应点的周期时间


@dataclass(eq=False)
class OrbitCloud:
    """锚点 T^{m} 轨道的采样点云，角坐标嵌入为 (cos, sin) 后建 KD 树"""
    anchor: np.ndarray
    indices: Tuple[int, ...]
    angles: np.ndarray
    points: np.ndarray
    tree: cKDTree
    spacing: float
    diameter: float

    def query(self, points: np.ndarray, system: HamiltonianSystem) -> Tuple[np.ndarray, np.ndarray]:
        return self.tree.query(embed(system, points))


def unit_vector(n: int, index: int) -> Tuple[float, ...]:
    coeffs = [0.0] * n
    coeffs[index] = 1.0
    return tuple(coeffs)


def embed(system: HamiltonianSystem, points: np.ndarray) -> np.ndarray:
    """把自由环面的角坐标替换为 (cos, sin)，使距离与角度的 2pi 周期相容"""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not system.angle_indices:
        return pts
    angle_idx = list(system.angle_indices)
    keep = [i for i in range(pts.shape[1]) if i not in angle_idx]
    ang = pts[:, angle_idx]
    return np.hstack([pts[:, keep], np.cos(ang), np.sin(ang)])


def phase_difference(system: HamiltonianSystem, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """p - q，角坐标差值约化到 (-pi, pi]"""
    diff = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    for i in system.angle_indices:
        diff[i] = -((-diff[i] + np.pi) % (2.0 * np.pi) - np.pi)
    return diff


def orbit_distance(system: HamiltonianSystem, p: np.ndarray, q: np.ndarray) -> float:
    """嵌入角坐标后的欧氏距离"""
    return float(np.linalg.norm(embed(system, p)[0] - embed(system, q)[0]))


def _rhs(system: HamiltonianSystem, coefficients: Sequence[float]):
    def rhs(t, y):
        return vector_field_from_gradient(system.combined_gradient(coefficients, y))
    return rhs


def _integrate(system: HamiltonianSystem, coefficients: Sequence[float], start: np.ndarray,
               t_span: Tuple[float, float], settings: NumericSettings, dense: bool = False,
               events=None, rel_tol: Optional[float] = None, abs_tol: Optional[float] = None):
    sol = solve_ivp(
        _rhs(system, coefficients), t_span, start,
        method=settings.method,
        rtol=rel_tol or settings.rel_tol,
        atol=abs_tol or settings.abs_tol,
        dense_output=dense,
        events=events,
    )
    if sol.status == -1:
        logger.error(f"{system.name} 积分失败 t_span={t_span}: {sol.message}")
        raise StepSizeUnderflowError(f"{system.name} 积分失败 t_span={t_span}: {sol.message}")
    if not np.all(np.isfinite(sol.y)):
        logger.error(f"{system.name} 积分状态非有限 t_span={t_span}")
        raise NonFiniteError(f"{system.name} 积分状态非有限 t_span={t_span}")
    return sol


def _check_conservation(system: HamiltonianSystem, states: np.ndarray, tol: float) -> float:
    count = states.shape[1]
    picks = np.unique(np.linspace(0, count - 1, min(count, MAX_CONSERVE_SAMPLES)).astype(int))
    initial = system.values(states[:, 0])
    worst = 0.0
    for k in picks:
        drift = np.abs(system.values(states[:, k]) - initial) / (1.0 + np.abs(initial))
        worst = max(worst, float(np.max(drift)))
    if worst > tol:
        logger.error(f"{system.name} 守恒量漂移 {worst:.3e} 超过容差 {tol:.1e}")
        raise ConservationError(f"{system.name} 守恒量漂移 {worst:.3e} 超过容差 {tol:.1e}")
    return worst


def flow(system: HamiltonianSystem, req: FlowRequest, settings: Optional[NumericSettings] = None) -> np.ndarray:
    """
    积分哈密顿量 sum(alpha_i f_i) 的流

    Args:
        system: 可积系统
        req: 积分请求
        settings: 数值设置

    Returns:
        np.ndarray: 终点
    """
    settings = settings or get_settings()
    start = system.point(req.start)
    if len(req.coefficients) != system.n:
        logger.error(f"系数个数 {len(req.coefficients)} 与分量数 {system.n} 不一致")
        raise ConfigError(f"系数个数 {len(req.coefficients)} 与分量数 {system.n} 不一致")
    if req.duration == 0.0:
        return start.copy()
    sol = _integrate(system, req.coefficients, start, (0.0, req.duration), settings,
                     rel_tol=req.rel_tol, abs_tol=req.abs_tol)
    if req.check:
        _check_conservation(system, sol.y, settings.tol_conserve)
    return sol.y[:, -1].copy()


def periodic_flow(system: HamiltonianSystem, index: int, t: float, start: np.ndarray,
                  settings: Optional[NumericSettings] = None) -> np.ndarray:
    """周期分量 index 的流，有闭式表达时直接使用"""
    if index not in system.periodic_flags:
        logger.error(f"分量 {index} 不是周期分量")
        raise ConfigError(f"分量 {index} 不是周期分量")
    if index in system.periodic_maps:
        return np.asarray(system.periodic_maps[index](np.asarray(start, dtype=float), t), dtype=float)
    return flow(system, FlowRequest(unit_vector(system.n, index), start, t, check=False), settings)


def joint_flow(system: HamiltonianSystem, times: Sequence[float], start: np.ndarray,
               settings: Optional[NumericSettings] = None) -> np.ndarray:
    """
    多时间联合流：先积分非周期分量，再作用周期分量

    Args:
        system: 可积系统
        times: 每个分量的时间
        start: 初值

    Returns:
        np.ndarray: 终点
    """
    settings = settings or get_settings()
    p = system.point(start)
    if len(times) != system.n:
        logger.error(f"时间向量长度 {len(times)} 与分量数 {system.n} 不一致")
        raise ConfigError(f"时间向量长度 {len(times)} 与分量数 {system.n} 不一致")
    for i in system.generators:
        if times[i] != 0.0:
            p = flow(system, FlowRequest(unit_vector(system.n, i), p, float(times[i]), check=False), settings)
    for i in system.periodic_flags:
        if times[i] != 0.0:
            p = periodic_flow(system, i, float(times[i]), p, settings)
    return p


def _periodic_image(system: HamiltonianSystem, indices: Sequence[int], theta: np.ndarray,
                    start: np.ndarray, settings: NumericSettings) -> np.ndarray:
    p = np.asarray(start, dtype=float)
    for i, t in zip(indices, theta):
        if t != 0.0:
            p = periodic_flow(system, i, float(t), p, settings)
    return p


def _field(system: HamiltonianSystem, index: int, p: np.ndarray) -> np.ndarray:
    return vector_field_from_gradient(system.components[index].gradient(p))


def orbit_cloud(system: HamiltonianSystem, anchor: np.ndarray, settings: Optional[NumericSettings] = None,
                samples: Optional[int] = None) -> OrbitCloud:
    """
    在周期分量的角度网格上采样锚点的环面轨道

    Args:
        system: 可积系统
        anchor: 锚点
        samples: 每个周期因子的采样数，缺省取 cloud_samples

    Returns:
        OrbitCloud: 点云
    """
    settings = settings or get_settings()
    anchor = system.point(anchor)
    samples = samples or settings.cloud_samples
    indices = tuple(system.periodic_flags)
    m = len(indices)
    grids = [np.linspace(0.0, system.period(i), samples, endpoint=False) for i in indices]
    angles = np.array(list(itertools.product(*grids))) if m else np.zeros((1, 0))
    points = np.array([_periodic_image(system, indices, row, anchor, settings) for row in angles])
    embedded = embed(system, points)
    tree = cKDTree(embedded)

    spacing = 0.0
    diameter = 0.0
    if m:
        shaped = embedded.reshape((samples,) * m + (embedded.shape[1],))
        steps = []
        for axis in range(m):
            gap = np.linalg.norm(np.roll(shaped, -1, axis=axis) - shaped, axis=-1)
            steps.append(float(np.max(gap)))
        spacing = float(np.sqrt(np.sum(np.square(steps))))
        diameter = 2.0 * float(np.max(np.linalg.norm(embedded - embedded.mean(axis=0), axis=1)))
    return OrbitCloud(anchor, indices, angles, points, tree, spacing, diameter)


def _sample_times(sol, resolution: float) -> np.ndarray:
    t = sol.t
    y = sol.y
    pieces = [t[:1]]
    for k in range(len(t) - 1):
        seg = float(np.linalg.norm(y[:, k + 1] - y[:, k]))
        count = max(1, int(np.ceil(seg / resolution)))
        pieces.append(np.linspace(t[k], t[k + 1], count + 1)[1:])
    return np.concatenate(pieces)


def _escape_event(radius: float):
    def escape(t, y):
        return float(np.linalg.norm(y)) - radius
    escape.terminal = True
    escape.direction = 1
    return escape


def first_hit_torus_orbit(system: HamiltonianSystem, generator: int, start: np.ndarray, anchor: np.ndarray,
                          t_min: Optional[float] = None, settings: Optional[NumericSettings] = None,
                          cloud: Optional[OrbitCloud] = None) -> HitResult:
    """
    求 f_generator 的流从 start 出发首次进入 anchor 的周期轨道的时间

    先在稠密输出上采样到轨道点云的距离，取离开之后第一个低于阈值的局部极小，
    再在 (t, theta) 上用 Gauss-Newton 加短程重新积分细化。

    Args:
        system: 可积系统
        generator: 非周期分量下标
        start: 起点
        anchor: 目标轨道上的锚点
        t_min: 排除出发时平凡命中的最小时间，缺省由离开半径决定
        settings: 数值设置
        cloud: 预先构造的锚点轨道点云

    Returns:
        HitResult: 命中时间、命中点与残差
    """
    settings = settings or get_settings()
    start = system.point(start)
    anchor = system.point(anchor)
    if generator in system.periodic_flags:
        logger.error(f"生成元 {generator} 是周期分量，首次命中无定义")
        raise ConfigError(f"生成元 {generator} 是周期分量，首次命中无定义")
    gap = float(np.max(np.abs(system.values(start) - system.values(anchor))))
    if gap > 100.0 * settings.tol_leaf:
        logger.error(f"起点与锚点不在同一叶上: |F(start) - F(anchor)| = {gap:.3e}")
        raise ConfigError(f"起点与锚点不在同一叶上: |F(start) - F(anchor)| = {gap:.3e}")

    cloud = cloud or orbit_cloud(system, anchor, settings)
    coeffs = unit_vector(system.n, generator)
    escape = _escape_event(settings.escape_radius)

    times = np.zeros(0)
    dists = np.zeros(0)
    nearest = np.zeros(0, dtype=int)
    points = np.zeros((0, system.dim))
    depart_radius = settings.departure_fraction * cloud.diameter if cloud.diameter > 0 else None
    depart_index = None
    t0, p0 = 0.0, start
    while t0 < settings.t_max:
        t1 = min(t0 + CHUNK_DURATION, settings.t_max)
        sol = _integrate(system, coeffs, p0, (t0, t1), settings, dense=True, events=[escape])
        if cloud.spacing > 0:
            resolution = 0.25 * cloud.spacing
        else:
            resolution = 0.01 * max(1e-3, float(np.max(np.ptp(sol.y, axis=1))))
        ts = _sample_times(sol, resolution)
        if times.size:
            ts = ts[1:]
        pts = sol.sol(ts).T
        d, idx = cloud.query(pts, system)
        times = np.concatenate([times, ts])
        dists = np.concatenate([dists, d])
        nearest = np.concatenate([nearest, idx])
        points = np.vstack([points, pts])

        if depart_radius is None:
            depart_radius = settings.departure_fraction * float(np.max(dists))
        threshold = 2.0 * cloud.spacing if cloud.spacing > 0 else 0.5 * depart_radius

        if depart_index is None:
            if t_min is not None:
                later = np.nonzero(times >= t_min)[0]
            else:
                later = np.nonzero(dists > depart_radius)[0]
            if later.size:
                depart_index = int(later[0])
                if t_min is None:
                    t_min = float(times[depart_index])
                    logger.debug(f"离开锚点轨道: t_min = {t_min:.6f}")

        escaped = sol.status == 1
        final = escaped or t1 >= settings.t_max
        if depart_index is not None:
            hit = _first_local_minimum(dists, depart_index, threshold, final)
            if hit is not None:
                theta = cloud.angles[nearest[hit]].astype(float)
                result = _refine_hit(system, generator, anchor, cloud.indices, float(times[hit]),
                                     points[hit], theta, t_min, settings)
                logger.debug(f"首次命中 t = {result.time:.12f}, 残差 {result.residual:.3e}")
                return result
        if escaped:
            logger.error(f"{system.name} 轨道在 t = {sol.t[-1]:.3f} 逃逸出半径 {settings.escape_radius}")
            raise HorizonExceededError(
                f"{system.name} 轨道在 t = {sol.t[-1]:.3f} 逃逸出半径 {settings.escape_radius}，叶可能非紧")
        t0, p0 = float(sol.t[-1]), sol.y[:, -1]

    logger.error(f"{system.name} 在时间上限 {settings.t_max} 内未命中锚点轨道")
    raise HorizonExceededError(f"{system.name} 在时间上限 {settings.t_max} 内未命中锚点轨道")


def _first_local_minimum(dists: np.ndarray, begin: int, threshold: float, final: bool) -> Optional[int]:
    for k in range(max(begin, 1), dists.size):
        if dists[k] >= threshold or dists[k] > dists[k - 1]:
            continue
        if k + 1 < dists.size:
            if dists[k] <= dists[k + 1]:
                return k
        elif final:
            return k
    return None


def _snap_to_leaf(system: HamiltonianSystem, p: np.ndarray, target: np.ndarray) -> np.ndarray:
    # 最小范数 Gauss-Newton 消去积分造成的离叶漂移，叶内位置不变
    for _ in range(MAX_SNAP_ITER):
        gap = target - system.values(p)
        if np.max(np.abs(gap)) < 1e-15 * (1.0 + np.max(np.abs(target))):
            break
        step, *_ = np.linalg.lstsq(system.jacobian(p), gap, rcond=None)
        p = p + step
    return p


def _refine_hit(system: HamiltonianSystem, generator: int, anchor: np.ndarray, indices: Tuple[int, ...],
                t_hit: float, p: np.ndarray, theta: np.ndarray, t_min: float,
                settings: NumericSettings) -> HitResult:
    coeffs = unit_vector(system.n, generator)
    target = system.values(anchor)
    residual = np.inf
    for _ in range(MAX_REFINE_ITER):
        p = _snap_to_leaf(system, p, target)
        q = _periodic_image(system, indices, theta, anchor, settings)
        r = phase_difference(system, p, q)
        residual = float(np.linalg.norm(r))
        if residual < 1e-3 * settings.tol_hit:
            break
        columns = [_field(system, generator, p)] + [-_field(system, i, q) for i in indices]
        delta, *_ = np.linalg.lstsq(np.column_stack(columns), -r, rcond=None)
        if abs(delta[0]) > 0.0:
            p = flow(system, FlowRequest(coeffs, p, float(delta[0]), check=False), settings)
        t_hit += float(delta[0])
        theta = theta + delta[1:]
        if np.linalg.norm(delta) < 1e-14 * (1.0 + abs(t_hit)):
            p = _snap_to_leaf(system, p, target)
            q = _periodic_image(system, indices, theta, anchor, settings)
            residual = float(np.linalg.norm(phase_difference(system, p, q)))
            break

    if not np.isfinite(residual) or residual > settings.tol_hit:
        logger.error(f"命中细化未收敛: 残差 {residual:.3e} > {settings.tol_hit:.1e}")
        raise RefinementError(f"命中细化未收敛: 残差 {residual:.3e} > {settings.tol_hit:.1e}")
    if t_hit < t_min - 1e-6 * (1.0 + abs(t_min)):
        logger.error(f"细化后的命中时间 {t_hit:.6f} 早于 t_min {t_min:.6f}")
        raise RefinementError(f"细化后的命中时间 {t_hit:.6f} 早于 t_min {t_min:.6f}")
    periods = np.array([system.period(i) for i in indices])
    return HitResult(time=t_hit, point=p, residual=residual, angles=np.mod(theta, periods) if indices else theta)


def close_orbit_times(system: HamiltonianSystem, frm: np.ndarray, to: np.ndarray,
                      settings: Optional[NumericSettings] = None, cloud: Optional[OrbitCloud] = None) -> np.ndarray:
    """
    求周期分量的时间 (tau_2, ..., tau_n)，使其联合流把 frm 送到 to

    Args:
        system: 可积系统
        frm: 起点（位于 to 的周期轨道上）
        to: 目标点
        cloud: 预先构造的 to 的轨道点云

    Returns:
        np.ndarray: 长度为 n 的时间向量，取值于 [0, 周期)，非周期分量处为 0
    """
    settings = settings or get_settings()
    frm = system.point(frm)
    to = system.point(to)
    times = np.zeros(system.n)
    indices = tuple(system.periodic_flags)
    if not indices:
        if orbit_distance(system, frm, to) > settings.tol_flow:
            logger.error("起点与目标点不重合且系统没有周期分量")
            raise OrbitClosureError("起点与目标点不重合且系统没有周期分量")
        return times

    cloud = cloud or orbit_cloud(system, to, settings)
    d, idx = cloud.query(frm, system)
    if d[0] > 4.0 * cloud.spacing:
        logger.error(f"起点不在目标点的周期轨道上: 距离 {d[0]:.3e}")
        raise OrbitClosureError(f"起点不在目标点的周期轨道上: 距离 {d[0]:.3e}")
    theta0 = -cloud.angles[idx[0]].astype(float)

    def residual(theta):
        return phase_difference(system, _periodic_image(system, indices, theta, frm, settings), to)

    def jacobian(theta):
        q = _periodic_image(system, indices, theta, frm, settings)
        return np.column_stack([_field(system, i, q) for i in indices])

    sol = least_squares(residual, theta0, jac=jacobian, method='lm', xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if not np.all(np.isfinite(sol.x)):
        logger.error(f"角度求解发散: {sol.message}")
        raise OrbitClosureError(f"角度求解发散: {sol.message}")

    for j, i in enumerate(indices):
        period = system.period(i)
        value = float(np.mod(sol.x[j], period))
        if period - value < 1e-9 * period:
            value = 0.0
        times[i] = value
    closure = float(np.linalg.norm(residual(np.array([times[i] for i in indices]))))
    if closure > settings.tol_flow:
        logger.error(f"周期流闭合残差 {closure:.3e} 超过容差 {settings.tol_flow:.1e}")
        raise OrbitClosureError(f"周期流闭合残差 {closure:.3e} 超过容差 {settings.tol_flow:.1e}")
    return times


def periodicity_defect(system: HamiltonianSystem, points: Sequence[np.ndarray],
                       settings: Optional[NumericSettings] = None) -> float:
    """周期分量数值流经过一个周期后回到起点的最大距离"""
    settings = settings or get_settings()
    worst = 0.0
    for p in points:
        for i in system.periodic_flags:
            end = flow(system, FlowRequest(unit_vector(system.n, i), p, system.period(i), check=False), settings)
            worst = max(worst, orbit_distance(system, end, p))
    return worst
