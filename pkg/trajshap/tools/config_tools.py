"""
配置检查工具
============

提供 TrajShap 配置状态检查功能。
"""

from pathlib import Path

import joblib
import numpy as np
import scipy

from ..config import (
    mcp, logger, TRAJSHAP_OUT_DIR, TRAJSHAP_MANIFEST, DEFAULT_WORKERS, DEBUG_NUMERICS, TOOLKIT_VERSION
)
from ..errors import TrajShapError
from ..harness import RunRecord, load_manifest


@mcp.tool()
def check_trajshap_config() -> str:
    """
    检查 TrajShap 配置状态。

    显示环境变量、依赖版本；如设置了 TRAJSHAP_MANIFEST，还会校验实验清单并列出已完成的阶段。
    建议在使用其他工具之前先调用此工具确认配置正确。

    Returns:
        配置检查结果
    """
    result_lines = ["🔧 TrajShap 配置检查", "=" * 40]
    result_lines.append(f"📌 工具版本: {TOOLKIT_VERSION}")
    result_lines.append(f"📌 依赖: numpy {np.__version__}, scipy {scipy.__version__}, joblib {joblib.__version__}")
    result_lines.append(f"✅ TRAJSHAP_OUT_DIR: {TRAJSHAP_OUT_DIR}")
    result_lines.append(f"✅ TRAJSHAP_WORKERS: {DEFAULT_WORKERS}")
    result_lines.append(f"📌 数值陷阱 (TRAJSHAP_DEBUG_NUMERICS): {'开启' if DEBUG_NUMERICS else '关闭'}")

    if not TRAJSHAP_MANIFEST:
        result_lines.append("❌ TRAJSHAP_MANIFEST: 未设置")
        result_lines.append("")
        result_lines.append("💡 请设置以下环境变量，或在调用工具时传入 manifest_path:")
        result_lines.append("   export TRAJSHAP_MANIFEST='manifests/smoke.env'")
        return "\n".join(result_lines)

    result_lines.append(f"✅ TRAJSHAP_MANIFEST: {TRAJSHAP_MANIFEST}")
    result_lines.append("")
    result_lines.append("🔗 校验实验清单...")
    try:
        manifest = load_manifest(Path(TRAJSHAP_MANIFEST))
    except TrajShapError as e:
        logger.warning(f"实验清单无效: {e}")
        result_lines.append(f"❌ 实验清单无效: {e}")
        return "\n".join(result_lines)

    run_dir = Path(manifest.out_dir or TRAJSHAP_OUT_DIR) / manifest.short_checksum
    result_lines.append(f"✅ 实验清单有效 (checksum {manifest.short_checksum})")
    result_lines.append(f"📁 运行目录: {run_dir}")
    result_lines.append(f"📋 变体: {', '.join(manifest.variants)}; 训练种子: {manifest.seeds.train}")
    if (run_dir / RunRecord.FILENAME).is_file():
        try:
            record = RunRecord.load_or_create(run_dir, manifest)
        except TrajShapError as e:
            result_lines.append(f"❌ 运行记录损坏: {e}")
        else:
            for stage, entry in record.stages.items():
                status = record.verify_stage(stage, run_dir)
                mark = "✅" if status is None else "⚠️"
                result_lines.append(f"{mark} {stage}: {len(entry.artifacts)} 个产物, {entry.seconds}s"
                                    + ("" if status is None else f" ({status})"))
    else:
        result_lines.append("📌 尚未运行任何阶段")
    return "\n".join(result_lines)
