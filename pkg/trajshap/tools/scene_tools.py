"""
单场景归因工具
==============

对已训练模型的单个验证场景计算并展示 Shapley 值。
"""

from pathlib import Path
from typing import Optional

from ..config import mcp, logger, TRAJSHAP_MANIFEST
from ..core.attribution import EstimatorKind, attribute_scene, super_agents
from ..core.metrics import MetricKind
from ..core.scene import Split
from ..errors import TrajShapError
from ..harness import Pipeline, load_manifest


@mcp.tool()
def attribute_single_scene(
    scene_id: int,
    variant: str = "baseline",
    train_seed: Optional[int] = None,
    metric: str = "nll",
    estimator: str = "auto",
    manifest_path: Optional[str] = None,
    out_dir: Optional[str] = None
) -> str:
    """
    计算单个验证场景中每个周边智能体的 Shapley 值。

    需要先完成 gen 与 train 阶段。φ < 0 表示该智能体的存在降低了指标（对 NLL 而言即 Super Agent）。

    Args:
        scene_id: 验证集场景 ID
        variant: baseline | cib
        train_seed: 训练种子，缺省取清单中的第一个
        metric: 指标标签，如 nll、minade@6、missrate@6:2.0
        estimator: exact | appro | auto
        manifest_path: 实验清单路径，缺省读 TRAJSHAP_MANIFEST
        out_dir: 产物根目录

    Returns:
        逐智能体的 φ、因果标签与有效性检查
    """
    path = manifest_path or TRAJSHAP_MANIFEST
    if not path:
        return "❌ 未指定实验清单\n\n💡 请传入 manifest_path，或设置环境变量 TRAJSHAP_MANIFEST"
    try:
        pipeline = Pipeline(load_manifest(Path(path)), Path(out_dir) if out_dir else None)
        manifest = pipeline.manifest
        if variant not in manifest.variants:
            return f"❌ 未知的模型变体: {variant}（可选: {', '.join(manifest.variants)}）"
        seed = manifest.seeds.train[0] if train_seed is None else train_seed
        pipeline.check_upstream("attr")
        scenes = {s.scene_id: s for s in pipeline.scenes(Split.VALIDATION)}
        if scene_id not in scenes:
            return f"❌ 验证集中没有 scene_id={scene_id}"
        scene = scenes[scene_id]
        kind = MetricKind.parse(metric)
        result = attribute_scene(
            pipeline.model(variant, seed), scene, [kind], EstimatorKind(estimator),
            manifest.attr.permutations, manifest.seeds.attr, 0, False, manifest.attr.n_exact_max,
        )[0]
    except (TrajShapError, ValueError) as e:
        logger.warning(f"单场景归因失败: {e}")
        return f"❌ 单场景归因失败: {e}"

    labels = scene.causal_labels()
    result_lines = [f"🎯 scene {scene_id} ({scene.generator_kind.value}) · {variant}.s{seed} · {kind.label}", "=" * 40]
    result_lines.append(f"📌 估计器: {result.estimator.value}; v(All)={result.v_full:.4f}; v(∅)={result.v_empty:.4f}")
    for agent_id in sorted(result.phi, key=lambda a: (result.phi[a], a)):
        err = result.stderr.get(agent_id, 0.0)
        result_lines.append(f"   agent {agent_id:>3} [{labels[agent_id].value:>9}] φ={result.phi[agent_id]:+.5f}"
                            + (f" ± {err:.5f}" if err else ""))
    result_lines.append("")
    result_lines.append(f"✅ 有效性残差 Σφ − (v(All) − v(∅)) = {result.efficiency_gap:.3e}")
    if kind.is_nll:
        members = sorted(super_agents(result).members)
        result_lines.append(f"⭐ Super Agents: {members if members else '无'}")
    return "\n".join(result_lines)
