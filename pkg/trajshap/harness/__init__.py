"""
实验流水线模块
==============

实验清单、运行记录与各阶段的执行。
"""

from .acceptance import evaluate_acceptance
from .manifest import BetaMode, ExperimentManifest, RunRecord, load_manifest, manifest_keys
from .pipeline import Pipeline, StageResult, format_stage_result

__all__ = [
    "evaluate_acceptance",
    "BetaMode",
    "ExperimentManifest",
    "RunRecord",
    "load_manifest",
    "manifest_keys",
    "Pipeline",
    "StageResult",
    "format_stage_result",
]
