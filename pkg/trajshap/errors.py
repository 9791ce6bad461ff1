"""
异常定义
========

库代码抛出的全部异常类型。CLI 与 MCP 工具在最外层把它们转换成退出码或 ❌ 提示。
"""


class TrajShapError(Exception):
    """所有 trajshap 异常的基类"""


class ConfigError(TrajShapError, ValueError):
    """配置或实验清单无效"""


class InvalidArgumentError(TrajShapError, ValueError):
    """调用参数无效（未知的 agent_id、错误的指标、长度不匹配等）"""


class ShapeError(InvalidArgumentError):
    """张量形状不兼容"""

    def __init__(self, op: str, *shapes):
        shape_text = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: 形状不兼容 {shape_text}")
        self.op = op
        self.shapes = shapes


class NumericError(TrajShapError, ArithmeticError):
    """出现 NaN/Inf"""


class TrainingError(TrajShapError, RuntimeError):
    """训练发散"""

    def __init__(self, step: int, message: str):
        super().__init__(f"训练在第 {step} 步失败: {message}")
        self.step = step


class CheckpointError(TrajShapError):
    """检查点版本、配置不匹配或文件损坏"""


class CoalitionLimitError(InvalidArgumentError):
    """精确 Shapley 的联盟数超出上限"""


class MissingArtifactError(TrajShapError):
    """上游阶段的产物不存在"""

    def __init__(self, stage: str, detail: str = ""):
        hint = f"请先运行 `trajshap {stage} --manifest <PATH>`"
        super().__init__(f"缺少阶段 `{stage}` 的产物{(': ' + detail) if detail else ''}。{hint}")
        self.stage = stage


class ManifestDriftError(TrajShapError):
    """实验清单或产物校验和与运行记录不一致"""


# CLI 中映射为退出码 1 的异常类型
VALIDATION_ERRORS = (ConfigError, InvalidArgumentError, MissingArtifactError, ManifestDriftError, CheckpointError)
