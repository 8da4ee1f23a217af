"""
统一异常定义
所有业务异常都继承自 ContextFormerError，命令行层据此决定退出码
"""


class ContextFormerError(Exception):
    """项目内所有可预期错误的基类"""


class DimensionError(ContextFormerError, ValueError):
    """张量或矩阵形状不匹配"""

    def __init__(self, message: str, *shapes: tuple) -> None:
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)


class ConfigError(ContextFormerError, ValueError):
    """配置非法或与数据/检查点不兼容"""


class UnderdeterminedSystemError(ContextFormerError, ValueError):
    """样本数少于待估参数个数"""


class UnstableSpecError(ContextFormerError, ValueError):
    """ARMA 系数不满足平稳性或可逆性"""


class DatasetError(ContextFormerError):
    """数据集缺失、为空或格式错误"""


class MissingContextError(ContextFormerError, ValueError):
    """上下文感知模型缺少元数据或时间戳输入"""


class TrainingDivergedError(ContextFormerError, RuntimeError):
    """训练损失出现 NaN/Inf"""


class CheckpointError(ContextFormerError):
    """检查点相关错误的基类"""


class CheckpointCorruptError(CheckpointError):
    """清单无法解析或数据载荷被截断"""


class CheckpointShapeError(CheckpointError):
    """检查点中的张量名称/形状与模型不一致"""


class CheckpointVersionError(CheckpointError):
    """检查点格式版本不受支持"""


class ReportError(ContextFormerError):
    """评估报告缺失或无法汇总"""
