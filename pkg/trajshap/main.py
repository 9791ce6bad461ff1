"""
TrajShap MCP 服务器入口
=======================

启动 MCP 服务器，加载所有工具。
"""

from .config import mcp, logger, TOOLKIT_VERSION

# 导入所有工具模块以注册装饰器
from . import tools  # noqa: F401


def main():
    """启动 MCP 服务器"""
    logger.info(f"正在启动 TrajShap MCP 服务器 v{TOOLKIT_VERSION}...")
    logger.info("可用工具: check_trajshap_config, generate_scenes, sweep_beta, train_models, compute_attributions, "
                "report_gaps, run_insertion_test, agreement_histograms, robustness_suite, build_report, run_pipeline, "
                "attribute_single_scene")
    mcp.run()


if __name__ == "__main__":
    main()
