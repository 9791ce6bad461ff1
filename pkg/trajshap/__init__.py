"""
TrajShap 包
===========

轨迹预测模型的 Shapley 智能体归因与条件信息瓶颈（CIB）分析，提供命令行与 MCP 工具两种入口。
"""

from .config import mcp, logger, TOOLKIT_VERSION

__version__ = TOOLKIT_VERSION
__all__ = ["mcp", "logger", "__version__"]
