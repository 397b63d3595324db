"""
异常定义模块。
区分配置错误（命令行退出码 1）与数值失败（退出码 2）。
"""


class ToolkitError(Exception):
    """工具包异常基类"""


class ConfigError(ToolkitError, ValueError):
    """系统描述或运行配置无效"""


class DimensionMismatchError(ToolkitError, ValueError):
    """相空间维数不匹配"""


class NonFiniteError(ToolkitError, ValueError):
    """出现非有限数值（nan/inf）"""


class NumericalError(ToolkitError, RuntimeError):
    """数值失败基类"""


class StepSizeUnderflowError(NumericalError):
    """积分步长下溢，轨道接近向量场的奇点"""


class ConservationError(NumericalError):
    """守恒量漂移超过容差"""


class HorizonExceededError(NumericalError):
    """在时间上限内没有命中目标轨道"""


class RefinementError(NumericalError):
    """命中点细化不收敛"""


class OrbitClosureError(NumericalError):
    """联合流不能闭合轨道"""


class NoConvergenceError(NumericalError):
    """迭代求解不收敛"""


class DegenerateCriticalPointError(NumericalError):
    """退化临界点，无法检测 Cartan 结构"""


class EigenSolverError(NumericalError):
    """特征值求解失败"""


class NotRegularError(NumericalError):
    """给定值不是正则值"""


class BranchCutError(NumericalError):
    """w 落在对数分支切割上"""


class WindingError(NumericalError):
    """积分路径穿过分支切割"""


class ClosednessError(NumericalError):
    """两条积分路径的结果不一致"""


class IllConditionedFitError(NumericalError):
    """拟合矩阵病态"""


class MatchingAmbiguityError(NumericalError):
    """连续性匹配的整数平移不唯一"""


class RoundingError(NumericalError):
    """单值性矩阵取整误差过大"""


class NonUnimodularError(NumericalError):
    """单值性矩阵行列式不是 ±1"""


class SingularJacobianError(NumericalError):
    """重参数化映射的雅可比矩阵奇异"""


class GridTooSmallError(NumericalError):
    """网格每个方向少于 3 个点"""
