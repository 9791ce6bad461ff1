"""
数值核心模块

包含张量/自动微分、场景模型、预测器、CIB、指标、归因、分析与鲁棒性评估。
"""

from .scene import (
    AgentRole, AgentState, AgentTrack, CausalLabel, GeneratorConfig, GeneratorKind, Scene, Split,
    generate_dataset, inject_dummy_agent, load_generator_config, load_scenes, mask_scene, save_scenes
)
from .predictor import (
    MixturePrediction, OptimizerConfig, PredictorConfig, PredictorModel, TrainingReport,
    load_checkpoint, predict, save_checkpoint, train
)
from .cib import CIBMode, CIBOutput, CIBParams, cib_forward, cib_loss_term, gaussian_kl
from .metrics import MetricKind, MetricValue, evaluate, value_function
from .attribution import (
    AttributionResult, EstimatorKind, GapReport, SuperAgentSet, gap_report, shapley_appro,
    shapley_exact, super_agents
)
from .analysis import (
    AgreementHistogram, AgreementMode, InsertionCurve, InsertionOrder, LabelFilter, agreement,
    causal_alignment, chi_square_against_baseline, deletion_test, extreme_mass, insertion_test
)
from .robustness import PerturbationKind, PerturbationSpec, RobustnessReport, abs_delta, perturb

__all__ = [
    "AgentRole", "AgentState", "AgentTrack", "CausalLabel", "GeneratorConfig", "GeneratorKind", "Scene",
    "Split", "generate_dataset", "inject_dummy_agent", "load_generator_config", "load_scenes", "mask_scene",
    "save_scenes",
    "MixturePrediction", "OptimizerConfig", "PredictorConfig", "PredictorModel", "TrainingReport",
    "load_checkpoint", "predict", "save_checkpoint", "train",
    "CIBMode", "CIBOutput", "CIBParams", "cib_forward", "cib_loss_term", "gaussian_kl",
    "MetricKind", "MetricValue", "evaluate", "value_function",
    "AttributionResult", "EstimatorKind", "GapReport", "SuperAgentSet", "gap_report", "shapley_appro",
    "shapley_exact", "super_agents",
    "AgreementHistogram", "AgreementMode", "InsertionCurve", "InsertionOrder", "LabelFilter", "agreement",
    "causal_alignment", "chi_square_against_baseline", "deletion_test", "extreme_mass", "insertion_test",
    "PerturbationKind", "PerturbationSpec", "RobustnessReport", "abs_delta", "perturb",
]
