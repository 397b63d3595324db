"""
命令行入口。
子命令 classify / periods / sigma / action / taylor / monodromy，
退出码 0 表示成功，1 表示配置错误（不写任何文件），2 表示数值失败（写出错误记录）。
"""

import argparse
import sys
from dataclasses import asdict
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml
from pydantic import ValidationError

from src import __version__
from src.api.models import (
    ActionRecord, ClassifyResult, LoopModel, MonodromyResult, NumericSettings, PeriodRecord,
    RunConfig, SigmaRecord, TaylorCoefficient, TaylorResult, WilliamsonIndexModel,
)
from src.analysis.lattice import AnchorPolicy, LogBranch, period_grid
from src.analysis.monodromy import LoopSpec, loop_monodromy
from src.analysis.regularization import (
    action_gradient, closedness_defect, integrate_S, sigma_grid, sigma_ray, taylor_fit,
)
from src.cli.io import write_csv, write_error, write_json
from src.engine.critical import classify_point, find_critical_point
from src.engine.errors import ConfigError, NonFiniteError, NumericalError
from src.engine.symplectic import HamiltonianSystem
from src.systems.loader import resolve_system
from src.utils.config import get_config_value, get_settings, load_config
from src.utils.logger import get_logger, set_level

logger = get_logger(__name__)

COMMANDS = ("classify", "periods", "sigma", "action", "taylor", "monodromy")


class _ArgumentParser(argparse.ArgumentParser):
    # 参数错误按配置错误处理（退出码 1）
    def error(self, message):
        raise ConfigError(message)


def _floats(text: str) -> List[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"无法解析数值列表: {text}") from e


def parse_grid(text: str) -> List[np.ndarray]:
    """
    解析网格描述 "v1min:v1max:n1,v2min:v2max:n2"

    Args:
        text: 网格描述

    Returns:
        List[np.ndarray]: 每个轴的坐标
    """
    axes = []
    for part in filter(None, (s.strip() for s in text.split(","))):
        pieces = part.split(":")
        try:
            lo, hi, count = float(pieces[0]), float(pieces[1]), int(pieces[2])
        except (ValueError, IndexError) as e:
            logger.error(f"无法解析网格轴: {part}")
            raise ConfigError(f"无法解析网格轴 '{part}'，格式应为 min:max:n") from e
        if len(pieces) != 3 or count < 1 or (count > 1 and not hi > lo):
            raise ConfigError(f"网格轴 '{part}' 无效")
        axes.append(np.linspace(lo, hi, count))
    if not axes:
        raise ConfigError(f"网格为空: '{text}'")
    return axes


def build_parser() -> argparse.ArgumentParser:
    """构造参数解析器"""
    common = _ArgumentParser(add_help=False)
    common.add_argument("--system", required=True, help="内置系统名、q_model:<kinds> 或系统描述 JSON 文件")
    common.add_argument("--out", default=None, help="输出文件，缺省写到标准输出")
    common.add_argument("--format", choices=["csv", "json"], default="json", help="输出格式")
    common.add_argument("--seed", type=int, default=None, help="随机种子 (u64)")
    common.add_argument("--rel-tol", type=float, default=None, help="积分相对容差")
    common.add_argument("--abs-tol", type=float, default=None, help="积分绝对容差")
    common.add_argument("--workers", type=int, default=None, help="并行线程数")
    common.add_argument("--trials", type=int, default=None, help="Williamson 分类的随机试验次数")
    common.add_argument("--config", dest="config_path", default=None, help="覆盖数值设置的 yaml 文件")
    common.add_argument("--log-cut", type=float, default=None, help="对数分支切割方向（弧度）")
    common.add_argument("--grid", default=None, help="网格 v1min:v1max:n1,v2min:v2max:n2")
    common.add_argument("--tail", type=_floats, default=None, help="v3,...,vn 的固定值")
    common.add_argument("--seed-point", type=_floats, default=None, help="临界点搜索初值")
    common.add_argument("--target-rank", type=int, default=None, help="临界点的目标秩")
    common.add_argument("--center", type=_floats, default=None, help="回路中心 v1,v2")
    common.add_argument("--radius", type=float, default=None, help="回路半径")
    common.add_argument("--steps", type=int, default=None, help="每圈步数")
    common.add_argument("--orientation", type=int, default=None, help="+1 逆时针, -1 顺时针")
    common.add_argument("--turns", type=int, default=None, help="回路圈数")
    common.add_argument("--taylor-degree", type=int, default=None, help="泰勒拟合总次数")
    common.add_argument("--path-radii", type=_floats, default=None, help="S 基路径上的采样半径（递增）")
    common.add_argument("--action-step", type=float, default=None, help="作用量差分步长")
    common.add_argument("--verbose", action="store_true", help="输出 DEBUG 日志")

    parser = _ArgumentParser(prog="ffmono", description="焦点-焦点奇点单值性数值工具包")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """把命令行参数转换为运行配置，未给出的回路与拟合参数取 config/toolkit.yml 的 defaults 段"""
    defaults = get_config_value(load_config('toolkit'), 'defaults', {}) or {}
    overrides = {key: getattr(args, key) for key in ("seed", "rel_tol", "abs_tol", "workers", "trials")
                 if getattr(args, key) is not None}
    data: Dict[str, Any] = {
        "command": args.command,
        "system": args.system,
        "out": args.out,
        "format": args.format,
        "overrides": overrides,
        "config_path": args.config_path,
        "radius": args.radius if args.radius is not None else defaults.get("loop_radius", 0.05),
        "steps": args.steps if args.steps is not None else defaults.get("loop_steps", 64),
        "taylor_degree": args.taylor_degree if args.taylor_degree is not None else defaults.get("taylor_degree", 3),
    }
    if args.path_radii is not None or "path_radii" in defaults:
        data["path_radii"] = args.path_radii if args.path_radii is not None else defaults["path_radii"]
    optional = {
        "log_cut": args.log_cut, "grid": args.grid, "tail": args.tail, "seed_point": args.seed_point,
        "target_rank": args.target_rank, "center": args.center, "orientation": args.orientation,
        "turns": args.turns, "action_step": args.action_step,
    }
    data.update({k: v for k, v in optional.items() if v is not None})
    return RunConfig(**data)


def _policy(settings: NumericSettings) -> AnchorPolicy:
    if settings.workers > 1:
        return AnchorPolicy.SEED
    return AnchorPolicy(get_config_value(load_config('toolkit'), 'defaults.anchor_policy', 'continuation'))


def _grid(config: RunConfig, system: HamiltonianSystem) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    if not config.grid:
        raise ConfigError(f"{config.command} 需要 --grid")
    axes = parse_grid(config.grid)
    if len(axes) + len(config.tail) != system.n:
        logger.error(f"网格轴数 {len(axes)} 加固定分量数 {len(config.tail)} 不等于 n = {system.n}")
        raise ConfigError(f"网格轴数 {len(axes)} 加固定分量数 {len(config.tail)} 不等于 n = {system.n}")
    mesh = np.meshgrid(*axes, indexing='ij')
    values = [np.concatenate([[m.ravel()[k] for m in mesh], config.tail]) for k in range(mesh[0].size)]
    return axes, values


def _require_json(config: RunConfig) -> None:
    if config.format != "json":
        raise ConfigError(f"{config.command} 只支持 json 输出")


def _columns(prefix: str, n: int) -> List[str]:
    return [f"{prefix}{i + 1}" for i in range(n)]


def _partial_failure(config: RunConfig, failures: List[Dict[str, Any]]) -> int:
    error = NumericalError(f"{len(failures)} 个值计算失败")
    write_error(config.command, error, config.out, failures)
    logger.error(f"{config.command}: {len(failures)} 个值计算失败，已写出部分结果")
    return 2


def _failure_entry(v: Sequence[float], error: Exception) -> Dict[str, Any]:
    return {"v": [float(x) for x in v], "type": type(error).__name__, "message": str(error)}


def cmd_classify(config: RunConfig, system: HamiltonianSystem, settings: NumericSettings) -> int:
    _require_json(config)
    seed = config.seed_point if config.seed_point is not None else [0.01] * system.dim
    cp = classify_point(system, find_critical_point(system, seed, config.target_rank, settings), settings=settings)
    write_json(ClassifyResult(
        system=system.name,
        point=cp.point.tolist(),
        rank=cp.rank,
        residual=cp.residual,
        wtype=WilliamsonIndexModel(**asdict(cp.wtype)),
        degenerate=cp.degenerate_flag,
    ), config.out)
    return 0


def cmd_periods(config: RunConfig, system: HamiltonianSystem, settings: NumericSettings) -> int:
    _, values = _grid(config, system)
    entries = period_grid(system, values, _policy(settings), settings)
    records = [PeriodRecord(v=e.value.v.tolist(), tau=e.basis.tau.tolist(), rows=e.basis.rows.tolist(),
                            residual=e.basis.residual, anchor=e.basis.anchor.tolist())
               for e in entries if e.ok]
    if config.format == "csv":
        header = _columns("v", system.n) + _columns("tau", system.n) + ["residual"] + _columns("anchor", system.dim)
        write_csv(header, [r.v + r.tau + [r.residual] + r.anchor for r in records], config.out)
    else:
        write_json(records, config.out)
    failures = [_failure_entry(e.value.v, e.error) for e in entries if not e.ok]
    return _partial_failure(config, failures) if failures else 0


def cmd_sigma(config: RunConfig, system: HamiltonianSystem, settings: NumericSettings) -> int:
    axes, _ = _grid(config, system)
    grid = sigma_grid(system, axes, LogBranch(config.log_cut), _policy(settings), settings,
                      tail=config.tail, components=tuple(range(len(axes))))
    if all(len(ax) >= 3 for ax in axes) and len(axes) >= 2:
        logger.info(f"sigma 闭性缺陷 {closedness_defect(grid):.3e}")
    flat_v = grid.values.reshape(-1, system.n)
    flat_sigma = grid.sigma.reshape(-1, system.n)
    records = [SigmaRecord(v=v.tolist(), sigma=s.tolist()) for v, s in zip(flat_v, flat_sigma)]
    if config.format == "csv":
        write_csv(_columns("v", system.n) + _columns("sigma", system.n), [r.v + r.sigma for r in records], config.out)
    else:
        write_json(records, config.out)
    return 0


def cmd_action(config: RunConfig, system: HamiltonianSystem, settings: NumericSettings) -> int:
    _, values = _grid(config, system)
    records = []
    failures = []
    for v in values:
        try:
            result = action_gradient(system, v, config.action_step, settings)
        except NumericalError as e:
            logger.warning(f"{v} 处作用量计算失败: {e}")
            failures.append(_failure_entry(v, e))
            continue
        records.append(ActionRecord(v=list(map(float, v)), action=result.action,
                                    tau=result.tau.tolist(), gradient=result.gradient.tolist()))
    if config.format == "csv":
        header = _columns("v", system.n) + ["action"] + _columns("tau", system.n) + _columns("dA", system.n)
        write_csv(header, [r.v + [r.action] + r.tau + r.gradient for r in records], config.out)
    else:
        write_json(records, config.out)
    return _partial_failure(config, failures) if failures else 0


def cmd_taylor(config: RunConfig, system: HamiltonianSystem, settings: NumericSettings) -> int:
    axes, _ = _grid(config, system)
    if len(axes) != 2:
        raise ConfigError("taylor 需要 (v1, v2) 二维网格")
    branch = LogBranch(config.log_cut)
    grid = sigma_grid(system, axes, branch, _policy(settings), settings, tail=config.tail)
    defect = closedness_defect(grid)
    first = grid.values[0, 0]
    angle = float(np.arctan2(first[1], first[0]))
    ray = sigma_ray(system, angle, config.path_radii, branch, settings, tail=config.tail)
    field = integrate_S(grid, ray, settings)
    if config.format == "csv":
        flat_v = field.nodes.reshape(-1, system.n)
        write_csv(_columns("v", system.n) + ["S"],
                  [v.tolist() + [float(s)] for v, s in zip(flat_v, field.values.ravel())], config.out)
        return 0
    fit = taylor_fit(field, config.taylor_degree, settings)
    derivatives = fit.derivatives
    write_json(TaylorResult(
        degree=fit.degree,
        coeffs=[TaylorCoefficient(j1=a, j2=b, value=c, derivative=derivatives[(a, b)])
                for (a, b), c in fit.coefficients.items()],
        residual=fit.residual,
        path_residual=field.path_residual,
        closedness_defect=defect,
    ), config.out)
    return 0


def cmd_monodromy(config: RunConfig, system: HamiltonianSystem, settings: NumericSettings) -> int:
    _require_json(config)
    if len(config.center) != 2:
        raise ConfigError(f"--center 必须给出 (v1, v2): {config.center}")
    loop = LoopSpec(center=list(config.center) + list(config.tail), radius=config.radius, steps=config.steps,
                    orientation=config.orientation, turns=config.turns)
    report = loop_monodromy(system, loop, settings)
    write_json(MonodromyResult(
        system=system.name,
        loop=LoopModel(center=config.center, radius=config.radius, steps=config.steps,
                       orientation=config.orientation, turns=config.turns, tail=config.tail),
        matrix=report.matrix.tolist(),
        rounding_error=report.matrix.max_rounding_error,
        per_point_residuals=report.per_point_residuals,
    ), config.out)
    return 0


HANDLERS: Dict[str, Callable[[RunConfig, HamiltonianSystem, NumericSettings], int]] = {
    "classify": cmd_classify,
    "periods": cmd_periods,
    "sigma": cmd_sigma,
    "action": cmd_action,
    "taylor": cmd_taylor,
    "monodromy": cmd_monodromy,
}


def run(config: RunConfig) -> int:
    """
    执行一个命令

    Args:
        config: 运行配置

    Returns:
        int: 退出码 0 成功，1 配置错误，2 数值失败
    """
    try:
        settings = get_settings(config.overrides, config.config_path)
        system = resolve_system(config.system, settings)
        logger.info(f"执行 {config.command}: 系统 {system.name}, n = {system.n}")
        return HANDLERS[config.command](config, system, settings)
    except (NumericalError, NonFiniteError) as e:
        logger.error(f"{config.command} 数值失败: {type(e).__name__}: {e}")
        write_error(config.command, e, config.out)
        return 2
    except (ConfigError, ValidationError, FileNotFoundError, ValueError, yaml.YAMLError) as e:
        logger.error(f"{config.command} 配置错误: {e}")
        print(f"配置错误: {e}", file=sys.stderr)
        return 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    """命令行入口 ffmono"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = config_from_args(args)
    except (ConfigError, ValidationError) as e:
        logger.error(f"命令行参数无效: {e}")
        print(f"配置错误: {e}", file=sys.stderr)
        return 1
    if args.verbose:
        set_level("DEBUG")
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
