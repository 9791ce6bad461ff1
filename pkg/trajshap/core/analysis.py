"""
归因分析
========

插入/删除测试、模型内/模型间一致率直方图（含 Binomial(N, ½) 随机基线）、
归因与因果标签的对照，以及 CSV 导出。
"""

import functools
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import binom, chi2

from ..config import INSERTION_GRID_STEPS
from ..errors import InvalidArgumentError
from ..utils import _exact_mean, _parallel_map, _write_csv
from .attribution import AttributionResult
from .metrics import MetricKind, SceneValueFunction
from .predictor import PredictorModel
from .scene import CausalLabel, Scene, Split


class InsertionOrder(str, Enum):
    MOST_HELPFUL_FIRST = "most_helpful_first"
    LEAST_HELPFUL_FIRST = "least_helpful_first"


class CurveDirection(str, Enum):
    INSERTION = "insertion"
    DELETION = "deletion"


class AgreementMode(str, Enum):
    INTRA_MODEL = "intra_model"
    INTER_MODEL = "inter_model"


class LabelFilter(str, Enum):
    ALL = "all"
    CAUSAL = "causal"
    NON_CAUSAL = "noncausal"


@dataclass
class InsertionCurve:
    """
    插入（或删除）曲线

    fractions[i] = i / steps；插入时保留排序后的前 ⌈f·n⌉ 个智能体，删除时移除前 ⌊f·n⌋ 个。
    """

    metric: MetricKind
    fractions: List[float]
    values: List[float]
    order: InsertionOrder
    split: Split
    n_scenes: int
    direction: CurveDirection = CurveDirection.INSERTION

    @property
    def minimum(self) -> float:
        return min(self.values)

    @property
    def dip(self) -> float:
        """两端较小者减去曲线最小值（U 形的深度，≥ 0）"""
        return min(self.values[0], self.values[-1]) - self.minimum


@dataclass
class AgreementHistogram:
    """
    一致率 r 的直方图

    counts[k] 是 r = k/N 的智能体数；baseline 是 total·Binom(N, ½) 的期望计数。
    """

    N: int
    counts: List[int]
    mean_phi_per_bin: List[Optional[float]]
    baseline: List[float]
    mode: AgreementMode
    label_filter: LabelFilter

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    @property
    def rates(self) -> List[float]:
        return [k / self.N for k in range(self.N + 1)]

    @property
    def full_agreement_mean_phi(self) -> Optional[float]:
        """r = N/N 这一格的平均 φ"""
        return self.mean_phi_per_bin[-1]


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    p_value: float
    pooled_bins: int


# ============================================================
# 插入 / 删除测试
# ============================================================


def _ranking(attr: AttributionResult, order: InsertionOrder) -> List[int]:
    """φ 升序（越小越有帮助），相同 φ 按 agent_id；LeastHelpfulFirst 为其逆序"""
    ranked = sorted(attr.phi, key=lambda i: (attr.phi[i], i))
    return ranked if order == InsertionOrder.MOST_HELPFUL_FIRST else ranked[::-1]


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _by_scene(scenes: Sequence[Scene], attributions) -> Dict[int, AttributionResult]:
    if isinstance(attributions, Mapping):
        mapping = dict(attributions)
    else:
        mapping = {a.scene_id: a for a in attributions}
    missing = sorted(s.scene_id for s in scenes if s.scene_id not in mapping)
    if missing:
        raise InvalidArgumentError(f"以下场景缺少归因结果: {missing}")
    for scene in scenes:
        if set(mapping[scene.scene_id].phi) != set(scene.agent_ids):
            raise InvalidArgumentError(f"scene {scene.scene_id}: 归因覆盖的智能体与场景不一致")
    return mapping


def _curve_scene(
    model: PredictorModel,
    scene: Scene,
    mapping: Dict[int, AttributionResult],
    metric: MetricKind,
    order: InsertionOrder,
    direction: CurveDirection,
    steps: int,
    inference_seed: int
) -> List[float]:
    ranking = _ranking(mapping[scene.scene_id], order)
    n = len(ranking)
    value_fn = SceneValueFunction(model, scene, metric, inference_seed)
    values = []
    for i in range(steps + 1):
        if direction == CurveDirection.INSERTION:
            kept = ranking[:_ceil_div(i * n, steps)]
        else:
            kept = ranking[(i * n) // steps:]
        values.append(value_fn(frozenset(kept)))
    return values


def _curve(
    model: PredictorModel,
    scenes: Sequence[Scene],
    attributions,
    metric: MetricKind,
    split: Split,
    order: InsertionOrder,
    direction: CurveDirection,
    steps: int,
    inference_seed: int,
    workers: int
) -> InsertionCurve:
    if not scenes:
        raise InvalidArgumentError("插入测试需要至少一个场景")
    if steps < 1:
        raise InvalidArgumentError("网格份数必须 ≥ 1")
    mapping = _by_scene(scenes, attributions)
    ordered = sorted(scenes, key=lambda s: s.scene_id)
    job = functools.partial(
        _curve_scene, model, mapping=mapping, metric=metric, order=InsertionOrder(order),
        direction=direction, steps=steps, inference_seed=inference_seed,
    )
    per_scene = _parallel_map(job, ordered, workers)
    values = [_exact_mean(row[i] for row in per_scene) for i in range(steps + 1)]
    return InsertionCurve(
        metric=metric, fractions=[i / steps for i in range(steps + 1)], values=values,
        order=InsertionOrder(order), split=Split(split), n_scenes=len(ordered), direction=direction,
    )


def insertion_test(
    model: PredictorModel,
    scenes: Sequence[Scene],
    attributions,
    metric: MetricKind,
    split: Split = Split.VALIDATION,
    order: InsertionOrder = InsertionOrder.MOST_HELPFUL_FIRST,
    steps: int = INSERTION_GRID_STEPS,
    inference_seed: int = 0,
    workers: int = 1
) -> InsertionCurve:
    """
    插入测试

    Args:
        model: 预测器
        scenes: 场景
        attributions: AttributionResult 列表或 scene_id → 结果
        metric: 曲线上评估的指标
        split: 场景所属划分（只做标记）
        order: 插入顺序
        steps: 网格份数，默认 10（11 个点）

    Returns:
        InsertionCurve；f=0 等于 keep=∅，f=1 等于 keep=All

    Raises:
        InvalidArgumentError: 有场景缺少归因（列出 scene_id）
    """
    return _curve(model, scenes, attributions, metric, split, order,
                  CurveDirection.INSERTION, steps, inference_seed, workers)


def deletion_test(
    model: PredictorModel,
    scenes: Sequence[Scene],
    attributions,
    metric: MetricKind,
    split: Split = Split.VALIDATION,
    order: InsertionOrder = InsertionOrder.MOST_HELPFUL_FIRST,
    steps: int = INSERTION_GRID_STEPS,
    inference_seed: int = 0,
    workers: int = 1
) -> InsertionCurve:
    """
    删除测试：从全部智能体出发，按 order 依次移除

    deletion(order, f) 与 insertion(逆序, 1 − f) 保留完全相同的集合。
    """
    return _curve(model, scenes, attributions, metric, split, order,
                  CurveDirection.DELETION, steps, inference_seed, workers)


# ============================================================
# 一致率
# ============================================================


def _coverage(run: Sequence[AttributionResult]) -> Dict[Tuple[int, int], float]:
    phis = {}
    for attr in run:
        if not attr.metric.is_nll:
            raise InvalidArgumentError(f"一致率基于 NLL 归因，当前指标 {attr.metric.label}")
        for agent_id, value in attr.phi.items():
            phis[(attr.scene_id, agent_id)] = value
    return phis


def agreement(
    attribution_runs: Sequence[Sequence[AttributionResult]],
    mode: AgreementMode,
    label_filter: LabelFilter = LabelFilter.ALL,
    labels: Optional[Mapping[Tuple[int, int], CausalLabel]] = None
) -> AgreementHistogram:
    """
    r_i = (1/N)·Σⱼ 1[φ_{i,j,NLL} < 0] 的直方图

    Args:
        attribution_runs: N 次运行（推理种子或训练种子），每次是一组场景的 NLL 归因
        mode: 模型内 / 模型间
        label_filter: 只统计指定因果标签的智能体
        labels: (scene_id, agent_id) → 因果标签；label_filter 不是 ALL 时必需

    Raises:
        InvalidArgumentError: N < 2 或各次运行覆盖的 (scene, agent) 不一致
    """
    N = len(attribution_runs)
    if N < 2:
        raise InvalidArgumentError(f"一致率需要至少 2 次运行，当前 {N}")
    runs = [_coverage(run) for run in attribution_runs]
    keys = sorted(runs[0])
    for j, run in enumerate(runs[1:], start=1):
        if set(run) != set(keys):
            raise InvalidArgumentError(f"第 {j} 次运行覆盖的 (scene, agent) 与第 0 次不一致")
    label_filter = LabelFilter(label_filter)
    if label_filter != LabelFilter.ALL:
        if labels is None:
            raise InvalidArgumentError("按因果标签过滤需要提供 labels")
        wanted = CausalLabel(label_filter.value)
        keys = [k for k in keys if labels.get(k) == wanted]

    counts = np.zeros(N + 1, dtype=np.int64)
    phi_sums = [[] for _ in range(N + 1)]
    for key in keys:
        phis = [run[key] for run in runs]
        k = sum(1 for v in phis if v < 0)
        counts[k] += 1
        phi_sums[k].extend(phis)
    total = int(counts.sum())
    baseline = (total * binom.pmf(np.arange(N + 1), N, 0.5)).tolist()
    mean_phi = [math.fsum(vals) / len(vals) if vals else None for vals in phi_sums]
    return AgreementHistogram(
        N=N, counts=counts.tolist(), mean_phi_per_bin=mean_phi, baseline=baseline,
        mode=AgreementMode(mode), label_filter=label_filter,
    )


def causal_alignment(
    attribution_runs: Sequence[Sequence[AttributionResult]],
    causal_labels: Mapping[Tuple[int, int], CausalLabel],
    mode: AgreementMode = AgreementMode.INTER_MODEL
) -> Tuple[AgreementHistogram, AgreementHistogram]:
    """
    按因果标签拆分的一致率直方图

    Returns:
        (Causal 直方图, NonCausal 直方图)；两者的 full_agreement_mean_phi 给出 r = 1 格的平均 φ
    """
    return (
        agreement(attribution_runs, mode, LabelFilter.CAUSAL, causal_labels),
        agreement(attribution_runs, mode, LabelFilter.NON_CAUSAL, causal_labels),
    )


def scene_labels(scenes: Sequence[Scene]) -> Dict[Tuple[int, int], CausalLabel]:
    """(scene_id, agent_id) → 因果标签"""
    return {(s.scene_id, a.agent_id): a.causal_label for s in scenes for a in s.surrounding}


def chi_square_against_baseline(hist: AgreementHistogram, min_expected: float = 5.0) -> ChiSquareResult:
    """
    直方图对 Binomial(N, ½) 基线的 χ² 拟合优度检验

    两端期望计数小于 min_expected 的格子向内合并。
    """
    groups = [[float(o), float(e)] for o, e in zip(hist.counts, hist.baseline)]
    while len(groups) > 1 and groups[0][1] < min_expected:
        first = groups.pop(0)
        groups[0] = [groups[0][0] + first[0], groups[0][1] + first[1]]
    while len(groups) > 1 and groups[-1][1] < min_expected:
        last = groups.pop()
        groups[-1] = [groups[-1][0] + last[0], groups[-1][1] + last[1]]
    dof = len(groups) - 1
    if dof < 1:
        return ChiSquareResult(statistic=0.0, dof=0, p_value=1.0, pooled_bins=len(groups))
    statistic = float(sum((o - e) ** 2 / e for o, e in groups if e > 0))
    return ChiSquareResult(statistic=statistic, dof=dof, p_value=float(chi2.sf(statistic, dof)),
                           pooled_bins=len(groups))


def extreme_mass(hist: AgreementHistogram) -> float:
    """r ∈ {0, 1} 的智能体占比"""
    if hist.total == 0:
        return 0.0
    return (hist.counts[0] + hist.counts[-1]) / hist.total


# ============================================================
# CSV 导出
# ============================================================


CURVE_FIELDS = ["direction", "split", "order", "metric", "fraction", "value", "n_scenes"]
HISTOGRAM_FIELDS = ["mode", "label_filter", "N", "r", "count", "baseline", "mean_phi"]


def curve_rows(curve: InsertionCurve, **extra: Any) -> List[Dict[str, Any]]:
    return [
        {"direction": curve.direction.value, "split": curve.split.value, "order": curve.order.value,
         "metric": curve.metric.label, "fraction": f, "value": v, "n_scenes": curve.n_scenes, **extra}
        for f, v in zip(curve.fractions, curve.values)
    ]


def histogram_rows(hist: AgreementHistogram, **extra: Any) -> List[Dict[str, Any]]:
    return [
        {"mode": hist.mode.value, "label_filter": hist.label_filter.value, "N": hist.N, "r": r,
         "count": c, "baseline": b, "mean_phi": m, **extra}
        for r, c, b, m in zip(hist.rates, hist.counts, hist.baseline, hist.mean_phi_per_bin)
    ]


def write_curves_csv(path: Path, curves: Sequence[InsertionCurve], metadata: Mapping[str, Any]) -> Path:
    rows = [row for curve in curves for row in curve_rows(curve)]
    return _write_csv(path, CURVE_FIELDS, rows, dict(metadata))


def write_histograms_csv(path: Path, hists: Sequence[AgreementHistogram], metadata: Mapping[str, Any]) -> Path:
    rows = [row for hist in hists for row in histogram_rows(hist)]
    return _write_csv(path, HISTOGRAM_FIELDS, rows, dict(metadata))
