"""
数据模型定义。
包含数值设置、系统描述、运行配置以及各命令输出记录的 Pydantic 模型。
"""

from pydantic import BaseModel, Field, ConfigDict, field_validator, model_validator
from typing import List, Optional, Dict, Any, Literal


class NumericSettings(BaseModel):
    """数值设置模型，所有容差必须为正"""
    model_config = ConfigDict(extra='forbid', frozen=True)

    method: Literal["RK45", "DOP853", "Radau", "LSODA"] = Field("RK45", description="积分方法")
    rel_tol: float = Field(1e-10, gt=0, description="积分相对容差")
    abs_tol: float = Field(1e-12, gt=0, description="积分绝对容差")
    tol_grad: float = Field(1e-6, gt=0, description="梯度检查相对容差")
    tol_sym: float = Field(1e-9, gt=0, description="Hessian 对称性容差")
    tol_bracket: float = Field(1e-8, gt=0, description="泊松括号容差")
    tol_flow: float = Field(1e-7, gt=0, description="轨道闭合容差")
    tol_conserve: float = Field(1e-8, gt=0, description="守恒量相对漂移容差")
    tol_hit: float = Field(1e-8, gt=0, description="首次命中残差容差")
    tol_leaf: float = Field(1e-10, gt=0, description="叶投影容差")
    tol_crit: float = Field(1e-8, gt=0, description="临界条件容差")
    tol_rank: float = Field(1e-8, gt=0, description="秩判定的相对奇异值阈值")
    tol_eig: float = Field(1e-7, gt=0, description="归一化特征值分组容差")
    trials: int = Field(5, ge=1, description="随机系数抽取次数")
    t_max: float = Field(1000.0, gt=0, description="命中搜索时间上限")
    departure_fraction: float = Field(0.1, gt=0, lt=1, description="离开半径占轨道直径的比例")
    cloud_samples: int = Field(64, ge=8, description="每个周期因子的轨道采样数")
    escape_radius: float = Field(1000.0, gt=0, description="逃逸半径")
    cond_max: float = Field(1e8, gt=0, description="重参数化雅可比条件数上限")
    tol_path: float = Field(1e-3, gt=0, description="路径无关性容差")
    fit_cond_max: float = Field(1e12, gt=0, description="泰勒拟合条件数上限")
    match_ratio: float = Field(2.0, gt=1, description="连续性匹配的次优/最优比下限")
    max_rounding_error: float = Field(1e-3, gt=0, description="单值性矩阵取整误差上限")
    seed: int = Field(20240601, ge=0, lt=2**64, description="随机种子")
    workers: int = Field(1, ge=1, description="并行线程数")


class WilliamsonIndexModel(BaseModel):
    """Williamson 指标"""
    model_config = ConfigDict(extra='forbid')

    k_e: int = Field(..., ge=0, description="椭圆分量数")
    k_f: int = Field(..., ge=0, description="焦点-焦点分量数")
    k_h: int = Field(..., ge=0, description="双曲分量数")
    k_x: int = Field(..., ge=0, description="横截分量数")


class ClassifyResult(BaseModel):
    """classify 命令输出"""
    model_config = ConfigDict(extra='forbid')

    system: str = Field(..., description="系统名称")
    point: List[float] = Field(..., description="临界点坐标")
    rank: int = Field(..., ge=0, description="dF 的秩")
    residual: float = Field(..., description="临界条件残差")
    wtype: WilliamsonIndexModel = Field(..., description="Williamson 指标")
    degenerate: bool = Field(False, description="各次试验是否不一致")


class PeriodRecord(BaseModel):
    """一个正则值处的周期基"""
    model_config = ConfigDict(extra='forbid')

    v: List[float] = Field(..., description="正则值")
    tau: List[float] = Field(..., description="返回时间行")
    rows: List[List[float]] = Field(..., description="周期格基矩阵")
    residual: float = Field(..., description="最大闭合残差")
    anchor: List[float] = Field(..., description="锚点坐标")


class SigmaRecord(BaseModel):
    """正则化 1-形式的一个样本"""
    model_config = ConfigDict(extra='forbid')

    v: List[float] = Field(..., description="正则值")
    sigma: List[float] = Field(..., description="sigma 分量（已连续提升）")


class ActionRecord(BaseModel):
    """作用量与其有限差分梯度"""
    model_config = ConfigDict(extra='forbid')

    v: List[float] = Field(..., description="正则值")
    action: float = Field(..., description="作用量积分")
    tau: List[float] = Field(..., description="返回时间行")
    gradient: List[float] = Field(..., description="作用量的中心差分梯度")


class TaylorCoefficient(BaseModel):
    """泰勒系数"""
    model_config = ConfigDict(extra='forbid')

    j1: int = Field(..., ge=0, description="v1 的次数")
    j2: int = Field(..., ge=0, description="v2 的次数")
    value: float = Field(..., description="多项式系数")
    derivative: float = Field(..., description="偏导数值 value * j1! * j2!")


class TaylorResult(BaseModel):
    """taylor 命令输出"""
    model_config = ConfigDict(extra='forbid')

    degree: int = Field(..., ge=0, description="拟合总次数")
    coeffs: List[TaylorCoefficient] = Field(default_factory=list, description="系数列表")
    residual: float = Field(..., description="拟合均方根残差")
    path_residual: Optional[float] = Field(None, description="路径无关性残差")
    closedness_defect: Optional[float] = Field(None, description="闭性缺陷")


class LoopModel(BaseModel):
    """回路描述"""
    model_config = ConfigDict(extra='forbid')

    center: List[float] = Field(..., description="回路中心 (v1, v2)")
    radius: float = Field(..., gt=0, description="半径")
    steps: int = Field(..., ge=8, description="每圈步数")
    orientation: int = Field(1, description="方向 +1 逆时针, -1 顺时针")
    turns: int = Field(1, ge=1, description="圈数")
    tail: List[float] = Field(default_factory=list, description="v3...vn 的固定值")

    @field_validator('orientation')
    @classmethod
    def _check_orientation(cls, value: int) -> int:
        if value not in (1, -1):
            raise ValueError("orientation 必须为 +1 或 -1")
        return value


class MonodromyResult(BaseModel):
    """monodromy 命令输出"""
    model_config = ConfigDict(extra='forbid')

    system: str = Field(..., description="系统名称")
    loop: LoopModel = Field(..., description="回路")
    matrix: List[List[int]] = Field(..., description="单值性矩阵")
    rounding_error: float = Field(..., description="最大取整误差")
    per_point_residuals: List[float] = Field(default_factory=list, description="各点最大闭合残差")


class ErrorDetail(BaseModel):
    """错误详情"""
    model_config = ConfigDict(extra='forbid')

    type: str = Field(..., description="异常类型")
    message: str = Field(..., description="错误信息")
    command: str = Field(..., description="命令")


class ErrorRecord(BaseModel):
    """数值失败时写出的错误记录"""
    model_config = ConfigDict(extra='forbid')

    error: ErrorDetail = Field(..., description="错误详情")
    failures: List[Dict[str, Any]] = Field(default_factory=list, description="逐点失败记录")


class RunConfig(BaseModel):
    """命令行运行配置"""
    model_config = ConfigDict(extra='forbid')

    command: Literal["classify", "periods", "sigma", "action", "taylor", "monodromy"] = Field(..., description="命令")
    system: str = Field(..., description="内置系统名或系统描述 JSON 文件路径")
    out: Optional[str] = Field(None, description="输出文件路径，缺省写到标准输出")
    format: Literal["csv", "json"] = Field("json", description="输出格式")
    overrides: Dict[str, Any] = Field(default_factory=dict, description="数值设置覆盖项")
    config_path: Optional[str] = Field(None, description="自定义配置文件")
    log_cut: float = Field(3.141592653589793, description="对数分支切割方向（弧度）")
    seed_point: Optional[List[float]] = Field(None, description="临界点搜索初值")
    target_rank: int = Field(0, ge=0, description="目标秩")
    grid: Optional[str] = Field(None, description="网格描述 v1min:v1max:n1,...")
    tail: List[float] = Field(default_factory=list, description="v3...vn 的固定值")
    center: List[float] = Field(default_factory=lambda: [0.0, 0.0], description="回路中心")
    radius: float = Field(0.05, gt=0, description="回路半径")
    steps: int = Field(64, ge=8, description="回路步数")
    orientation: int = Field(1, description="回路方向")
    turns: int = Field(1, ge=1, description="回路圈数")
    taylor_degree: int = Field(3, ge=0, description="泰勒拟合次数")
    path_radii: List[float] = Field(default_factory=lambda: [0.0025, 0.005, 0.01, 0.02], description="S 基路径上的采样半径")
    action_step: float = Field(1e-3, gt=0, description="作用量差分步长")

    @field_validator('orientation')
    @classmethod
    def _check_orientation(cls, value: int) -> int:
        if value not in (1, -1):
            raise ValueError("orientation 必须为 +1 或 -1")
        return value

    @field_validator('path_radii')
    @classmethod
    def _check_radii(cls, value: List[float]) -> List[float]:
        if len(value) < 2 or any(r <= 0 for r in value) or sorted(value) != list(value):
            raise ValueError("path_radii 必须是至少两个递增的正数")
        return value


class BlockModel(BaseModel):
    """Williamson 块描述"""
    model_config = ConfigDict(extra='forbid')

    kind: Literal["focusfocus", "elliptic", "hyperbolic", "transverse"] = Field(..., description="块类型")
    multiplicity: int = Field(1, ge=1, description="重数")


class ReparamModel(BaseModel):
    """重参数化 g 的描述"""
    model_config = ConfigDict(extra='forbid')

    kind: Literal["linear", "champagne_normal_form"] = Field(..., description="重参数化类型")
    matrix: Optional[List[List[float]]] = Field(None, description="线性重参数化矩阵")

    @model_validator(mode='after')
    def _check_matrix(self) -> "ReparamModel":
        if self.kind == "linear" and self.matrix is None:
            raise ValueError("linear 重参数化必须给出 matrix")
        return self


class SystemSpec(BaseModel):
    """可积系统描述，product 与 reparam 通过 base 嵌套"""
    model_config = ConfigDict(extra='forbid')

    type: Literal["q_model", "champagne_bottle", "product", "reparam", "builtin"] = Field(..., description="系统类型")
    blocks: Optional[List[BlockModel]] = Field(None, description="q_model 的块列表")
    k: Optional[int] = Field(None, ge=0, description="自由环面因子个数")
    g: Optional[ReparamModel] = Field(None, description="重参数化")
    base: Optional["SystemSpec"] = Field(None, description="被乘积或重参数化的系统")
    name: Optional[str] = Field(None, description="builtin 系统名")

    @model_validator(mode='after')
    def _check_fields(self) -> "SystemSpec":
        required = {
            "q_model": ["blocks"],
            "product": ["base", "k"],
            "reparam": ["base", "g"],
            "builtin": ["name"],
        }.get(self.type, [])
        missing = [key for key in required if getattr(self, key) is None]
        if missing:
            raise ValueError(f"{self.type} 缺少字段: {missing}")
        return self


SystemSpec.model_rebuild()
