"""
流水线工具
==========

每个 CLI 阶段对应一个 MCP 工具；工具从不抛异常，失败时返回 ❌ 提示。
"""

from pathlib import Path
from typing import Optional

from ..config import mcp, logger, TRAJSHAP_MANIFEST
from ..errors import MissingArtifactError, ManifestDriftError, VALIDATION_ERRORS
from ..harness import Pipeline, format_stage_result, load_manifest


def _run_stage(
    stage: str,
    manifest_path: Optional[str],
    out_dir: Optional[str],
    workers: Optional[int],
    force: bool,
    **options
) -> str:
    path = manifest_path or TRAJSHAP_MANIFEST
    if not path:
        return "❌ 未指定实验清单\n\n💡 请传入 manifest_path，或设置环境变量 TRAJSHAP_MANIFEST"
    try:
        pipeline = Pipeline(load_manifest(Path(path)), Path(out_dir) if out_dir else None, workers, force)
        if stage == "run-all":
            results = pipeline.run_all(**options)
        else:
            results = [pipeline.run(stage, **options)]
    except MissingArtifactError as e:
        return f"❌ {e}\n\n💡 也可以调用对应的 MCP 工具先完成阶段 `{e.stage}`"
    except ManifestDriftError as e:
        return f"❌ {e}\n\n💡 如确认要覆盖，请传入 force=true"
    except VALIDATION_ERRORS as e:
        return f"❌ 参数或配置无效: {e}"
    except Exception as e:
        logger.exception(f"阶段 {stage} 运行失败")
        return f"❌ 阶段 {stage} 运行失败: {type(e).__name__}: {e}"
    return "\n\n".join(format_stage_result(r) for r in results)


@mcp.tool()
def generate_scenes(manifest_path: Optional[str] = None, out_dir: Optional[str] = None,
                    workers: Optional[int] = None, force: bool = False) -> str:
    """
    生成训练集与验证集场景（阶段 gen）。

    Args:
        manifest_path: 实验清单路径，缺省读 TRAJSHAP_MANIFEST
        out_dir: 产物根目录
        workers: 并行 worker 数
        force: 忽略校验和不一致

    Returns:
        阶段结果
    """
    return _run_stage("gen", manifest_path, out_dir, workers, force)


@mcp.tool()
def sweep_beta(manifest_path: Optional[str] = None, out_dir: Optional[str] = None,
               workers: Optional[int] = None, force: bool = False) -> str:
    """
    在 β 网格上训练 CIB 变体并选出验证 NLL 最低的 β（阶段 sweep-beta）。

    Returns:
        各 β 的验证 NLL 与选中的 β
    """
    return _run_stage("sweep-beta", manifest_path, out_dir, workers, force)


@mcp.tool()
def train_models(manifest_path: Optional[str] = None, out_dir: Optional[str] = None,
                 workers: Optional[int] = None, force: bool = False) -> str:
    """
    按全部训练种子训练基线与 CIB 变体（阶段 train）。

    Returns:
        检查点路径与最终验证 NLL
    """
    return _run_stage("train", manifest_path, out_dir, workers, force)


@mcp.tool()
def compute_attributions(manifest_path: Optional[str] = None, out_dir: Optional[str] = None,
                         workers: Optional[int] = None, force: bool = False,
                         estimator: Optional[str] = None) -> str:
    """
    计算 Shapley 归因（阶段 attr）。

    Args:
        estimator: exact | appro | auto，缺省取清单 attr.estimator

    Returns:
        归因文件路径与 dummy 智能体检查结果
    """
    return _run_stage("attr", manifest_path, out_dir, workers, force, estimator=estimator)


@mcp.tool()
def report_gaps(manifest_path: Optional[str] = None, out_dir: Optional[str] = None,
                workers: Optional[int] = None, force: bool = False) -> str:
    """
    计算 All / Super / 无周边智能体 三种条件下的指标差距（阶段 gaps）。

    Returns:
        Δ_Super-All 与 Δ_No-All
    """
    return _run_stage("gaps", manifest_path, out_dir, workers, force)


@mcp.tool()
def run_insertion_test(manifest_path: Optional[str] = None, out_dir: Optional[str] = None,
                       workers: Optional[int] = None, force: bool = False) -> str:
    """
    插入测试与删除测试（阶段 insert）。

    Returns:
        每条曲线相对端点的下凹深度
    """
    return _run_stage("insert", manifest_path, out_dir, workers, force)


@mcp.tool()
def agreement_histograms(manifest_path: Optional[str] = None, out_dir: Optional[str] = None,
                         workers: Optional[int] = None, force: bool = False) -> str:
    """
    模型间 / 模型内一致率直方图与 χ² 检验（阶段 agree）。

    Returns:
        各直方图的极端区间质量
    """
    return _run_stage("agree", manifest_path, out_dir, workers, force)


@mcp.tool()
def robustness_suite(manifest_path: Optional[str] = None, out_dir: Optional[str] = None,
                     workers: Optional[int] = None, force: bool = False) -> str:
    """
    噪声与移除扰动下的 Abs(Δ)（阶段 robust）。

    Returns:
        每个模型、每种扰动的 %Abs(Δ)
    """
    return _run_stage("robust", manifest_path, out_dir, workers, force)


@mcp.tool()
def build_report(manifest_path: Optional[str] = None, out_dir: Optional[str] = None,
                 workers: Optional[int] = None, force: bool = False) -> str:
    """
    汇总跨训练种子的均值 ± 标准差表格（阶段 report）。

    Returns:
        报告文件路径与 NLL 差距
    """
    return _run_stage("report", manifest_path, out_dir, workers, force)


@mcp.tool()
def run_pipeline(manifest_path: Optional[str] = None, out_dir: Optional[str] = None,
                 workers: Optional[int] = None, force: bool = False,
                 estimator: Optional[str] = None) -> str:
    """
    依次运行全部阶段。

    ⚠️ 完整清单需要训练多个模型，可能耗时较长；建议先用 manifests/smoke.env。

    Returns:
        每个阶段的结果
    """
    return _run_stage("run-all", manifest_path, out_dir, workers, force, estimator=estimator)
