"""
内置系统模块。
提供 Williamson 二次模型 Q_k、香槟瓶基准系统、直和与自由环面乘积以及动量映射的重参数化。
"""

from typing import Callable, Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass
from enum import Enum
from functools import reduce

import numpy as np
from scipy.optimize import newton, root

from src.api.models import NumericSettings
from src.engine.errors import ConfigError, NoConvergenceError, SingularJacobianError
from src.engine.symplectic import (
    HamiltonianSystem, ScalarField, central_jacobian, linear_field, quadratic_field,
)
from src.utils.config import get_settings
from src.utils.logger import get_logger

logger = get_logger(__name__)

TWO_PI = 2.0 * np.pi
SQRT2 = np.sqrt(2.0)


class BlockKind(Enum):
    """Williamson 块类型，定义顺序即分量顺序"""
    FOCUSFOCUS = "focusfocus"
    ELLIPTIC = "elliptic"
    HYPERBOLIC = "hyperbolic"
    TRANSVERSE = "transverse"

    @property
    def dofs(self) -> int:
        return 2 if self is BlockKind.FOCUSFOCUS else 1


BLOCK_ORDER = [BlockKind.FOCUSFOCUS, BlockKind.ELLIPTIC, BlockKind.HYPERBOLIC, BlockKind.TRANSVERSE]


@dataclass(frozen=True)
class BlockSpec:
    """块类型与重数"""
    kind: BlockKind
    multiplicity: int = 1

    def __post_init__(self):
        if self.multiplicity < 0:
            raise ConfigError(f"块重数不能为负: {self.multiplicity}")

    @property
    def dofs(self) -> int:
        return self.kind.dofs * self.multiplicity


@dataclass(frozen=True, eq=False)
class ReparamMap:
    """动量映射值空间上的局部微分同胚 g"""
    forward: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None   # 形状 (n, n, n)
    inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None
    preserves: Tuple[int, ...] = ()   # 满足 g_i(v) = v_i 的分量
    name: str = "g"

    def second_derivatives(self, v: np.ndarray) -> np.ndarray:
        if self.hessian is not None:
            return np.asarray(self.hessian(v), dtype=float)
        return central_jacobian(lambda u: np.asarray(self.jacobian(u), dtype=float), v)

    def invert(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.inverse is not None:
            return np.asarray(self.inverse(v), dtype=float)
        sol = root(lambda u: np.asarray(self.forward(u)) - v, v, jac=self.jacobian)
        if not sol.success:
            logger.error(f"{self.name} 在 {v} 处求逆失败: {sol.message}")
            raise NoConvergenceError(f"{self.name} 在 {v} 处求逆失败: {sol.message}")
        return sol.x


def linear_reparam(matrix: Sequence[Sequence[float]]) -> ReparamMap:
    """线性重参数化 g(v) = A v"""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"线性重参数化矩阵必须是方阵: shape={a.shape}")
    n = a.shape[0]
    preserves = tuple(i for i in range(n) if np.array_equal(a[i], np.eye(n)[i]))
    return ReparamMap(
        forward=lambda v: a @ v,
        jacobian=lambda v: a.copy(),
        hessian=lambda v: np.zeros((n, n, n)),
        inverse=lambda v: np.linalg.solve(a, v),
        preserves=preserves,
        name="linear",
    )


# 消失环积分的围道：|u| = rho 内含 P(u) 的两个小根，外含 u ~ 1 的大根
CONTOUR_RADIUS = 0.5
CONTOUR_NODES = 128
MAX_CONTOUR_RATIO = 0.95
_CONTOUR = CONTOUR_RADIUS * np.exp(2j * np.pi * np.arange(CONTOUR_NODES) / CONTOUR_NODES)
_CONTOUR_WEIGHT = SQRT2 * np.sqrt(1.0 - _CONTOUR) * _CONTOUR


def _contour_terms(h: float, j: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # P(u) = 2 u^2 (1 - u) (1 + z(u))，返回 z、sqrt(1 + z) 与 u^2 (1 - u)
    u = _CONTOUR
    base = u * u * (1.0 - u)
    z = (2.0 * h * u - j * j) / (2.0 * base)
    ratio = float(np.max(np.abs(z)))
    if ratio >= MAX_CONTOUR_RATIO:
        logger.error(f"(h, j) = ({h}, {j}) 超出正规形的定义域: max|z| = {ratio:.3f}")
        raise ConfigError(f"(h, j) = ({h}, {j}) 超出正规形的定义域，需要 |h| + j^2 < 0.2")
    return z, np.sqrt(1.0 + z), base


def _mean(values: np.ndarray) -> float:
    return float(np.mean(values).real)


def champagne_normal_form() -> ReparamMap:
    """
    香槟瓶的焦点-焦点正规形坐标 g(h, j) = (q, j)

    q 是消失环上的复作用量。约化到 u = r^2 后 p_r dr = sqrt(P(u)) / (2u) du，
    P(u) = 2hu - j^2 + 2u^2 - 2u^3，

        q(h, j) = (1 / pi i) * 围道积分_{|u| = 1/2} sqrt(P(u)) / (2u) du

    用梯形公式计算（指数收敛）。Taylor 展开与四阶 Birkhoff 正规形
    H = sqrt2 q + (3 q^2 + J^2) / 4 一致，定义域为 |h| + j^2 < 0.2。
    """
    def forward(v):
        h, j = float(v[0]), float(v[1])
        _, s, _ = _contour_terms(h, j)
        return np.array([_mean(_CONTOUR_WEIGHT * s), j])

    def jacobian(v):
        h, j = float(v[0]), float(v[1])
        _, s, base = _contour_terms(h, j)
        z_h = _CONTOUR / base
        z_j = -j / base
        return np.array([
            [_mean(_CONTOUR_WEIGHT * z_h / (2.0 * s)), _mean(_CONTOUR_WEIGHT * z_j / (2.0 * s))],
            [0.0, 1.0],
        ])

    def hessian(v):
        h, j = float(v[0]), float(v[1])
        _, s, base = _contour_terms(h, j)
        z_h = _CONTOUR / base
        z_j = -j / base
        z_jj = -1.0 / base
        s3 = 4.0 * s ** 3
        out = np.zeros((2, 2, 2))
        out[0, 0, 0] = _mean(_CONTOUR_WEIGHT * (-z_h * z_h / s3))
        out[0, 0, 1] = out[0, 1, 0] = _mean(_CONTOUR_WEIGHT * (-z_h * z_j / s3))
        out[0, 1, 1] = _mean(_CONTOUR_WEIGHT * (z_jj / (2.0 * s) - z_j * z_j / s3))
        return out

    def inverse(u):
        q, j = float(u[0]), float(u[1])
        guess = SQRT2 * q + (3.0 * q * q + j * j) / 4.0
        try:
            h = newton(lambda x: forward((x, j))[0] - q, guess,
                       fprime=lambda x: jacobian((x, j))[0, 0], tol=1e-15, maxiter=50)
        except RuntimeError as e:
            logger.error(f"正规形在 {u} 处求逆失败: {e}")
            raise NoConvergenceError(f"正规形在 {u} 处求逆失败: {e}") from e
        return np.array([float(h), j])

    return ReparamMap(forward=forward, jacobian=jacobian, hessian=hessian, inverse=inverse,
                      preserves=(1,), name="champagne_normal_form")


def _rotation(a: int, b: int, n: int) -> Callable[[np.ndarray, float], np.ndarray]:
    # (z_1, z_2) -> (e^{-it} z_1, e^{-it} z_2)
    def rotate(p: np.ndarray, t: float) -> np.ndarray:
        c, s = np.cos(t), np.sin(t)
        q = np.array(p, dtype=float)
        for i, j in ((a, b), (n + a, n + b)):
            q[i] = c * p[i] + s * p[j]
            q[j] = -s * p[i] + c * p[j]
        return q
    return rotate


def _elliptic_rotation(a: int, n: int, rate: float) -> Callable[[np.ndarray, float], np.ndarray]:
    # x + i xi -> e^{i rate t} (x + i xi)
    def rotate(p: np.ndarray, t: float) -> np.ndarray:
        c, s = np.cos(rate * t), np.sin(rate * t)
        q = np.array(p, dtype=float)
        q[a] = c * p[a] - s * p[n + a]
        q[n + a] = s * p[a] + c * p[n + a]
        return q
    return rotate


def _translation(a: int) -> Callable[[np.ndarray, float], np.ndarray]:
    def translate(p: np.ndarray, t: float) -> np.ndarray:
        q = np.array(p, dtype=float)
        q[a] -= t
        return q
    return translate


def _single_block(kind: BlockKind) -> HamiltonianSystem:
    if kind is BlockKind.FOCUSFOCUS:
        q1 = np.zeros((4, 4))
        q1[0, 2] = q1[2, 0] = q1[1, 3] = q1[3, 1] = 1.0
        q2 = np.zeros((4, 4))
        q2[0, 3] = q2[3, 0] = 1.0
        q2[1, 2] = q2[2, 1] = -1.0
        return HamiltonianSystem(
            components=(quadratic_field(q1, "f1"), quadratic_field(q2, "f2")),
            periodic_flags=(1,),
            periods={1: TWO_PI},
            periodic_maps={1: _rotation(0, 1, 2)},
            leaf_seed=lambda v: np.array([1.0, 0.0, v[0], v[1]]),
            critical_value=lambda v: bool(np.hypot(v[0], v[1]) < 1e-14),
            name="focusfocus",
        )
    if kind is BlockKind.ELLIPTIC:
        return HamiltonianSystem(
            components=(quadratic_field(2.0 * np.eye(2), "e"),),
            periodic_flags=(0,),
            periods={0: np.pi},
            periodic_maps={0: _elliptic_rotation(0, 1, 2.0)},
            leaf_seed=lambda v: np.array([np.sqrt(max(v[0], 0.0)), 0.0]),
            critical_value=lambda v: bool(abs(v[0]) < 1e-14),
            name="elliptic",
        )
    if kind is BlockKind.HYPERBOLIC:
        return HamiltonianSystem(
            components=(quadratic_field(np.array([[0.0, 1.0], [1.0, 0.0]]), "h"),),
            leaf_seed=lambda v: np.array([1.0, v[0]]),
            critical_value=lambda v: bool(abs(v[0]) < 1e-14),
            name="hyperbolic",
        )
    return HamiltonianSystem(
        components=(linear_field(np.array([0.0, 1.0]), "xi"),),
        periodic_flags=(0,),
        periods={0: TWO_PI},
        angle_indices=(0,),
        periodic_maps={0: _translation(0)},
        leaf_seed=lambda v: np.array([0.0, v[0]]),
        name="transverse",
    )


def _lift_field(f: ScalarField, idx: np.ndarray, dim: int) -> ScalarField:
    def func(p):
        return f.func(p[idx])

    def grad(p):
        g = np.zeros(dim)
        g[idx] = f.gradient(p[idx])
        return g

    def hess(p):
        h = np.zeros((dim, dim))
        h[np.ix_(idx, idx)] = f.hessian(p[idx])
        return h

    return ScalarField(func=func, grad=grad, hess=hess, dim=dim, name=f.name)


def _lift_map(m: Callable[[np.ndarray, float], np.ndarray], idx: np.ndarray):
    def mapped(p, t):
        q = np.array(p, dtype=float)
        q[idx] = m(p[idx], t)
        return q
    return mapped


def direct_sum(a: HamiltonianSystem, b: HamiltonianSystem) -> HamiltonianSystem:
    """
    直和 a + b，坐标为 (x_a, x_b, xi_a, xi_b)，分量先 a 后 b

    Args:
        a: 第一个系统
        b: 第二个系统

    Returns:
        HamiltonianSystem: 直和系统
    """
    na, nb = a.n, b.n
    n = na + nb
    dim = 2 * n
    idx_a = np.concatenate([np.arange(na), n + np.arange(na)])
    idx_b = np.concatenate([na + np.arange(nb), n + na + np.arange(nb)])

    components = tuple(_lift_field(f, idx_a, dim) for f in a.components) + \
        tuple(_lift_field(f, idx_b, dim) for f in b.components)
    periodic_flags = tuple(a.periodic_flags) + tuple(na + i for i in b.periodic_flags)
    periods = {**{i: a.period(i) for i in a.periodic_flags}, **{na + i: b.period(i) for i in b.periodic_flags}}
    maps = {i: _lift_map(m, idx_a) for i, m in a.periodic_maps.items()}
    maps.update({na + i: _lift_map(m, idx_b) for i, m in b.periodic_maps.items()})
    angle_indices = tuple(int(idx_a[k]) for k in a.angle_indices) + tuple(int(idx_b[k]) for k in b.angle_indices)

    leaf_seed = None
    if a.leaf_seed is not None and b.leaf_seed is not None:
        def leaf_seed(v):
            p = np.zeros(dim)
            p[idx_a] = a.leaf_seed(np.asarray(v[:na], dtype=float))
            p[idx_b] = b.leaf_seed(np.asarray(v[na:], dtype=float))
            return p

    def critical_value(v):
        return a.is_critical_value(v[:na]) or b.is_critical_value(v[na:])

    return HamiltonianSystem(
        components=components,
        periodic_flags=periodic_flags,
        periods=periods,
        angle_indices=angle_indices,
        periodic_maps=maps,
        leaf_seed=leaf_seed,
        critical_value=critical_value,
        name=f"{a.name}+{b.name}",
    )


def q_model(blocks: Sequence[BlockSpec]) -> HamiltonianSystem:
    """
    Williamson 二次模型的直和，分量顺序为 (f1, f2, e..., h..., xi...)

    Args:
        blocks: 块列表

    Returns:
        HamiltonianSystem: 二次模型
    """
    kinds: List[BlockKind] = []
    for kind in BLOCK_ORDER:
        for spec in blocks:
            if spec.kind is kind:
                kinds.extend([kind] * spec.multiplicity)
    if not kinds:
        logger.error("块列表为空，无法构造二次模型")
        raise ConfigError("块列表为空，无法构造二次模型")
    system = reduce(direct_sum, [_single_block(k) for k in kinds])
    name = "q_model:" + ",".join(k.value for k in kinds)
    logger.debug(f"构造二次模型 {name}, n = {system.n}")
    return _renamed(system, name)


def _renamed(system: HamiltonianSystem, name: str) -> HamiltonianSystem:
    return HamiltonianSystem(
        components=system.components,
        periodic_flags=system.periodic_flags,
        periods=system.periods,
        angle_indices=system.angle_indices,
        periodic_maps=system.periodic_maps,
        leaf_seed=system.leaf_seed,
        critical_value=system.critical_value,
        name=name,
    )


def harmonic_oscillator() -> HamiltonianSystem:
    """一维谐振子 e = (x^2 + xi^2) / 2，周期 2pi"""
    return HamiltonianSystem(
        components=(quadratic_field(np.eye(2), "oscillator"),),
        periodic_flags=(0,),
        periods={0: TWO_PI},
        periodic_maps={0: _elliptic_rotation(0, 1, 1.0)},
        leaf_seed=lambda v: np.array([np.sqrt(2.0 * max(v[0], 0.0)), 0.0]),
        critical_value=lambda v: bool(abs(v[0]) < 1e-14),
        name="oscillator",
    )


def _champagne_h(p):
    r2 = p[0] ** 2 + p[1] ** 2
    return 0.5 * (p[2] ** 2 + p[3] ** 2) + r2 * r2 - r2


def _champagne_h_grad(p):
    r2 = p[0] ** 2 + p[1] ** 2
    k = 4.0 * r2 - 2.0
    return np.array([k * p[0], k * p[1], p[2], p[3]])


def _champagne_h_hess(p):
    r2 = p[0] ** 2 + p[1] ** 2
    k = 4.0 * r2 - 2.0
    h = np.zeros((4, 4))
    h[:2, :2] = k * np.eye(2) + 8.0 * np.outer(p[:2], p[:2])
    h[2, 2] = h[3, 3] = 1.0
    return h


def _champagne_seed(v):
    h, j = v[0], v[1]
    r = 0.5
    xi2 = j / r
    potential = r ** 4 - r ** 2
    xi1 = -np.sqrt(max(2.0 * (h - potential) - xi2 * xi2, 0.0))
    return np.array([r, 0.0, xi1, xi2])


def champagne_bottle() -> HamiltonianSystem:
    """
    香槟瓶系统：H = |xi|^2 / 2 + r^4 - r^2, J = x1 xi2 - x2 xi1

    原点是唯一取值 (0, 0) 的不动点，为焦点-焦点型。
    """
    q_j = np.zeros((4, 4))
    q_j[0, 3] = q_j[3, 0] = 1.0
    q_j[1, 2] = q_j[2, 1] = -1.0
    return HamiltonianSystem(
        components=(
            ScalarField(func=_champagne_h, grad=_champagne_h_grad, hess=_champagne_h_hess, dim=4, name="H"),
            quadratic_field(q_j, "J"),
        ),
        periodic_flags=(1,),
        periods={1: TWO_PI},
        periodic_maps={1: _rotation(0, 1, 2)},
        leaf_seed=_champagne_seed,
        critical_value=lambda v: bool(np.hypot(v[0], v[1]) < 1e-14),
        name="champagne_bottle",
    )


def product_with_free_torus(system: HamiltonianSystem, k: int) -> HamiltonianSystem:
    """与 k 个自由环面因子 (theta_j, I_j) 的乘积，新增分量 f_j = xi_j"""
    if k < 0:
        logger.error(f"自由环面因子个数不能为负: {k}")
        raise ConfigError(f"自由环面因子个数不能为负: {k}")
    if k == 0:
        return system
    torus = q_model([BlockSpec(BlockKind.TRANSVERSE, k)])
    return _renamed(direct_sum(system, torus), f"{system.name}x{k}")


def reparametrize(system: HamiltonianSystem, g: ReparamMap, settings: Optional[NumericSettings] = None,
                  samples: Optional[Sequence[Sequence[float]]] = None) -> HamiltonianSystem:
    """
    复合 g o F，纤维（从而叶、临界点与 Williamson 类型）不变

    Args:
        system: 原系统
        g: 重参数化映射
        settings: 数值设置（使用 cond_max）
        samples: 额外检查雅可比条件数的值点

    Returns:
        HamiltonianSystem: 新系统
    """
    settings = settings or get_settings()
    n = system.n
    for v in [np.zeros(n)] + [np.asarray(s, dtype=float) for s in (samples or [])]:
        jac = np.asarray(g.jacobian(v), dtype=float)
        cond = np.linalg.cond(jac) if np.all(np.isfinite(jac)) else np.inf
        if not np.isfinite(cond) or cond > settings.cond_max:
            logger.error(f"重参数化 {g.name} 在 {v} 处雅可比条件数 {cond:.3e} 超过 {settings.cond_max:.1e}")
            raise SingularJacobianError(f"重参数化 {g.name} 在 {v} 处雅可比条件数 {cond:.3e} 超过 {settings.cond_max:.1e}")

    def component(i: int) -> ScalarField:
        def func(p):
            return float(np.asarray(g.forward(system.values(p)))[i])

        def grad(p):
            return np.asarray(g.jacobian(system.values(p)))[i] @ system.jacobian(p)

        def hess(p):
            v = system.values(p)
            jg = np.asarray(g.jacobian(v))[i]
            dF = system.jacobian(p)
            h = sum(jg[k] * system.components[k].hessian(p) for k in range(n))
            return h + dF.T @ g.second_derivatives(v)[i] @ dF

        return ScalarField(func=func, grad=grad, hess=hess, dim=system.dim, name=f"{g.name}[{i}]")

    kept = tuple(i for i in system.periodic_flags if i in g.preserves)
    leaf_seed = None
    if system.leaf_seed is not None:
        def leaf_seed(v):
            return system.leaf_seed(g.invert(v))

    def critical_value(v):
        return system.is_critical_value(g.invert(v))

    logger.debug(f"重参数化 {system.name} -> {g.name}, 保留周期分量 {kept}")
    return HamiltonianSystem(
        components=tuple(component(i) for i in range(n)),
        periodic_flags=kept,
        periods={i: system.period(i) for i in kept},
        angle_indices=system.angle_indices,
        periodic_maps={i: system.periodic_maps[i] for i in kept if i in system.periodic_maps},
        leaf_seed=leaf_seed,
        critical_value=critical_value,
        name=f"{g.name}({system.name})",
    )


def normalized_champagne_bottle() -> HamiltonianSystem:
    """香槟瓶的正规化版本，w = v1 + i v2 是焦点-焦点正规形坐标"""
    return _renamed(reparametrize(champagne_bottle(), champagne_normal_form()), "normalized_champagne_bottle")


BUILTIN_SYSTEMS: Dict[str, Callable[[], HamiltonianSystem]] = {
    "champagne_bottle": champagne_bottle,
    "normalized_champagne_bottle": normalized_champagne_bottle,
    "champagne_free_torus": lambda: product_with_free_torus(champagne_bottle(), 1),
    "oscillator": harmonic_oscillator,
}
