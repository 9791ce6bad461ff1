"""
鲁棒性评估
==========

基于噪声与基于移除的扰动，以及 Abs(Δ) = (1/n)·Σ|m(f(x')) − m(f(x))|。
"""

import dataclasses
import functools
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import InvalidArgumentError
from ..utils import _exact_mean, _parallel_map, _rng, _write_csv
from .metrics import MetricKind, evaluate
from .predictor import PredictorModel
from .scene import AgentTrack, CausalLabel, Scene


class PerturbationKind(str, Enum):
    GAUSSIAN_NOISE = "gaussian_noise"
    REMOVE_CAUSAL = "remove_causal"
    REMOVE_NON_CAUSAL = "remove_noncausal"


@dataclass(frozen=True)
class PerturbationSpec:
    """
    扰动描述

    Attributes:
        kind: 扰动种类
        sigma: 高斯噪声标准差（米），仅 GAUSSIAN_NOISE 使用
        seed: 噪声种子
        include_target: 噪声是否也加到目标历史上
        dt: 用于由扰动后位置重算速度的时间步长
    """

    kind: PerturbationKind
    sigma: float = 0.0
    seed: int = 0
    include_target: bool = False
    dt: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", PerturbationKind(self.kind))
        if self.kind == PerturbationKind.GAUSSIAN_NOISE and not self.sigma > 0:
            raise InvalidArgumentError(f"高斯噪声的 sigma 必须 > 0，当前 {self.sigma}")
        if self.dt <= 0:
            raise InvalidArgumentError("dt 必须 > 0")

    @classmethod
    def noise(cls, sigma: float, seed: int = 0, include_target: bool = False, dt: float = 0.5) -> "PerturbationSpec":
        return cls(PerturbationKind.GAUSSIAN_NOISE, sigma, seed, include_target, dt)

    @property
    def label(self) -> str:
        if self.kind == PerturbationKind.GAUSSIAN_NOISE:
            return f"noise_{self.sigma!r}"
        return self.kind.value


@dataclass(frozen=True)
class RobustnessReport:
    spec: PerturbationSpec
    metric: MetricKind
    abs_delta: float
    percent_abs_delta: float
    n_scenes: int
    original_mean: float
    perturbed_mean: float


def _finite_difference(positions: np.ndarray, dt: float) -> np.ndarray:
    """第 0 步用前向差分，其余用后向差分"""
    diff = np.zeros_like(positions)
    if positions.shape[0] > 1:
        diff[1:] = positions[1:] - positions[:-1]
        diff[0] = positions[1] - positions[0]
    return diff / dt


def _noisy_history(history: np.ndarray, noise: np.ndarray, dt: float) -> np.ndarray:
    """
    在 (x, y) 上加噪声，速度按扰动后位置的有限差分重算

    差分是线性的，重算结果等于原速度加上噪声的差分；这样噪声为 0 时速度保持不变，
    原速度与位置差分一致时结果就是扰动后位置的差分。
    """
    out = history.copy()
    out[:, :2] += noise
    out[:, 2:4] += _finite_difference(noise, dt)
    return out


def _noisy_track(track: AgentTrack, spec: PerturbationSpec, scene_id: int) -> AgentTrack:
    rng = _rng(spec.seed, scene_id, track.agent_id)
    noise = rng.normal(0.0, spec.sigma, size=(track.history.shape[0], 2))
    return dataclasses.replace(track, history=_noisy_history(track.history, noise, spec.dt))


def perturb(scene: Scene, spec: PerturbationSpec) -> Scene:
    """
    扰动一个场景

    GAUSSIAN_NOISE：对每个周边智能体（可选包括目标）的历史 (x, y) 加逐时刻独立的 N(0, σ²)，
    噪声流由 (seed, scene_id, agent_id) 派生；REMOVE_*：移除对应标签的全部智能体。

    Raises:
        InvalidArgumentError: 移除扰动遇到未标注的智能体
    """
    if spec.kind == PerturbationKind.GAUSSIAN_NOISE:
        surrounding = tuple(_noisy_track(a, spec, scene.scene_id) for a in scene.surrounding)
        target = _noisy_track(scene.target, spec, scene.scene_id) if spec.include_target else scene.target
        return dataclasses.replace(scene, target=target, surrounding=surrounding)

    unlabeled = [a.agent_id for a in scene.surrounding if a.causal_label == CausalLabel.UNLABELED]
    if unlabeled:
        raise InvalidArgumentError(
            f"scene {scene.scene_id}: 智能体 {unlabeled} 没有因果标签，无法执行 {spec.kind.value}"
        )
    drop = CausalLabel.CAUSAL if spec.kind == PerturbationKind.REMOVE_CAUSAL else CausalLabel.NON_CAUSAL
    return dataclasses.replace(scene, surrounding=tuple(a for a in scene.surrounding if a.causal_label != drop))


def _paired_values(model: PredictorModel, scene: Scene, spec: PerturbationSpec, metric: MetricKind,
                   inference_seed: int) -> Tuple[float, float]:
    gt = scene.gt_future
    original = evaluate(model.predict(scene, None, inference_seed), gt, metric).value
    perturbed = evaluate(model.predict(perturb(scene, spec), None, inference_seed), gt, metric).value
    return original, perturbed


def abs_delta(
    model: PredictorModel,
    scenes: Sequence[Scene],
    spec: PerturbationSpec,
    metric: Optional[MetricKind] = None,
    inference_seed: int = 0,
    workers: int = 1
) -> RobustnessReport:
    """
    Abs(Δ) 与 %Abs(Δ)

    Args:
        model: 预测器
        scenes: 场景（n ≥ 1）
        spec: 扰动
        metric: 指标，默认 minADE（全部模态）

    Returns:
        RobustnessReport；百分比相对未扰动的数据集均值
    """
    if not scenes:
        raise InvalidArgumentError("abs_delta 需要至少一个场景")
    metric = metric or MetricKind.min_ade()
    job = functools.partial(_paired_values, model, spec=spec, metric=metric, inference_seed=inference_seed)
    pairs = _parallel_map(job, list(scenes), workers)
    delta = _exact_mean(abs(p - o) for o, p in pairs)
    original_mean = _exact_mean(o for o, _ in pairs)
    percent = 100.0 * delta / abs(original_mean) if original_mean != 0 else 0.0
    return RobustnessReport(
        spec=spec, metric=metric, abs_delta=delta, percent_abs_delta=percent, n_scenes=len(pairs),
        original_mean=original_mean, perturbed_mean=_exact_mean(p for _, p in pairs),
    )


ROBUSTNESS_FIELDS = ["perturbation", "sigma", "seed", "include_target", "metric", "abs_delta",
                     "percent_abs_delta", "original_mean", "perturbed_mean", "n_scenes"]


def report_row(report: RobustnessReport, **extra: Any) -> Dict[str, Any]:
    return {
        "perturbation": report.spec.kind.value, "sigma": report.spec.sigma, "seed": report.spec.seed,
        "include_target": report.spec.include_target, "metric": report.metric.label,
        "abs_delta": report.abs_delta, "percent_abs_delta": report.percent_abs_delta,
        "original_mean": report.original_mean, "perturbed_mean": report.perturbed_mean,
        "n_scenes": report.n_scenes, **extra,
    }


def write_reports_csv(path: Path, reports: Sequence[RobustnessReport], metadata: Mapping[str, Any]) -> Path:
    return _write_csv(path, ROBUSTNESS_FIELDS, [report_row(r) for r in reports], dict(metadata))
