"""
评估指标
========

minADE / minFDE / MissRate / NLL，以及归因使用的价值函数 v(S) = m(f(S))。

所有指标都是越小越好。
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, Iterable, Optional

import numpy as np
from scipy.special import logsumexp

from ..config import DEFAULT_MISS_THRESHOLD
from ..errors import InvalidArgumentError
from .predictor import CoalitionEvaluator, MixturePrediction, PredictorModel
from .scene import Scene, _check_keep

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class MetricName(str, Enum):
    MIN_ADE = "minade"
    MIN_FDE = "minfde"
    MISS_RATE = "missrate"
    NLL = "nll"


@dataclass(frozen=True)
class MetricKind:
    """
    指标种类

    Attributes:
        name: 指标名
        k: 参与评估的 top-K' 模态数（按概率），None 表示全部模态
        threshold: MissRate 的距离阈值（米）
    """

    name: MetricName
    k: Optional[int] = None
    threshold: float = DEFAULT_MISS_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "name", MetricName(self.name))
        if self.k is not None and self.k < 1:
            raise InvalidArgumentError(f"K' 必须 ≥ 1，当前 {self.k}")
        if not self.threshold >= 0:
            raise InvalidArgumentError(f"漏检阈值必须 ≥ 0，当前 {self.threshold}")

    @classmethod
    def min_ade(cls, k: Optional[int] = None) -> "MetricKind":
        return cls(MetricName.MIN_ADE, k)

    @classmethod
    def min_fde(cls, k: Optional[int] = None) -> "MetricKind":
        return cls(MetricName.MIN_FDE, k)

    @classmethod
    def miss_rate(cls, k: Optional[int] = None, threshold: float = DEFAULT_MISS_THRESHOLD) -> "MetricKind":
        return cls(MetricName.MISS_RATE, k, threshold)

    @classmethod
    def nll(cls) -> "MetricKind":
        return cls(MetricName.NLL)

    @property
    def is_nll(self) -> bool:
        return self.name == MetricName.NLL

    @property
    def label(self) -> str:
        """
        文本标签，例如 nll、minade@6、missrate@6:2.0

        parse(label) 可以还原。
        """
        if self.is_nll:
            return "nll"
        text = self.name.value + ("" if self.k is None else f"@{self.k}")
        if self.name == MetricName.MISS_RATE:
            text += f":{self.threshold!r}"
        return text

    @classmethod
    def parse(cls, text: str) -> "MetricKind":
        raw = text.strip().lower()
        threshold = DEFAULT_MISS_THRESHOLD
        if ":" in raw:
            raw, thr = raw.split(":", 1)
            threshold = float(thr)
        k = None
        if "@" in raw:
            raw, k_text = raw.split("@", 1)
            k = int(k_text)
        try:
            name = MetricName(raw)
        except ValueError:
            raise InvalidArgumentError(f"未知的指标: {text!r}") from None
        return cls(name, k, threshold)

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class MetricValue:
    kind: MetricKind
    value: float
    lower_is_better: bool = True


def top_modes(pred: MixturePrediction, k: Optional[int]) -> np.ndarray:
    """按概率降序取前 k 个模态下标，概率相同时下标小者优先"""
    if k is None:
        k = pred.K
    if k > pred.K:
        raise InvalidArgumentError(f"K'={k} 超过模型模态数 K={pred.K}")
    order = np.lexsort((np.arange(pred.K), -pred.mode_probs))
    return order[:k]


def mixture_nll(pred: MixturePrediction, gt: np.ndarray) -> float:
    """−log Σ_k π_k Π_t N(gt_t; μ_kt, diag σ_kt²)，使用全部模态"""
    z = (gt[None, :, :] - pred.modes) / pred.sigmas
    per_mode = np.sum(-_HALF_LOG_2PI - np.log(pred.sigmas) - 0.5 * z * z, axis=(1, 2))
    with np.errstate(divide="ignore"):
        log_probs = pred.log_probs if pred.log_probs is not None else np.log(pred.mode_probs)
    return float(-logsumexp(log_probs + per_mode))


def evaluate(pred: MixturePrediction, gt: np.ndarray, kind: MetricKind) -> MetricValue:
    """
    评估一条预测

    Args:
        pred: 混合预测
        gt: (F, 2) 真值未来位置
        kind: 指标种类

    Returns:
        MetricValue

    Raises:
        InvalidArgumentError: 长度不匹配或 K' 超过 K
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != (pred.F, 2):
        raise InvalidArgumentError(f"真值形状 {gt.shape} 与预测长度 F={pred.F} 不匹配")
    if kind.is_nll:
        return MetricValue(kind, mixture_nll(pred, gt))
    idx = top_modes(pred, kind.k)
    dist = np.linalg.norm(pred.modes[idx] - gt[None, :, :], axis=-1)
    if kind.name == MetricName.MIN_ADE:
        value = float(dist.mean(axis=1).min())
    elif kind.name == MetricName.MIN_FDE:
        value = float(dist[:, -1].min())
    else:
        value = 0.0 if bool(np.any(dist[:, -1] <= kind.threshold)) else 1.0
    return MetricValue(kind, value)


# ============================================================
# 价值函数
# ============================================================


class SceneValueFunction:
    """
    单个场景上的价值函数 v(S)

    共享一个 CoalitionEvaluator，按联盟缓存结果；use_cache=False 时每次都重新求值。
    """

    def __init__(
        self,
        model: PredictorModel,
        scene: Scene,
        kind: MetricKind,
        inference_seed: int = 0,
        stochastic: bool = False,
        use_cache: bool = True,
        evaluator: Optional[CoalitionEvaluator] = None
    ):
        self.scene = scene
        self.kind = kind
        self.use_cache = use_cache
        self.evaluator = evaluator or CoalitionEvaluator(model, scene, inference_seed, stochastic)
        self.cache: Dict[FrozenSet[int], float] = {}

    @property
    def evaluations(self) -> int:
        return self.evaluator.evaluations

    def __call__(self, coalition: Iterable[int]) -> float:
        key = frozenset(coalition)
        if self.use_cache and key in self.cache:
            return self.cache[key]
        value = evaluate(self.evaluator.predict(key), self.scene.gt_future, self.kind).value
        if self.use_cache:
            self.cache[key] = value
        return value


def value_function(
    model: PredictorModel,
    scene: Scene,
    coalition: Iterable[int],
    kind: MetricKind,
    inference_seed: int = 0,
    stochastic: bool = False
) -> float:
    """
    v(S) = m(f(S))

    Args:
        model: 预测器
        scene: 场景
        coalition: 可见的周边 agent_id 集合
        kind: 指标
        inference_seed: 推理种子（默认的均值模式下无影响）

    Returns:
        指标值
    """
    keep = _check_keep(scene, coalition)
    pred = model.predict(scene, keep, inference_seed, stochastic)
    return evaluate(pred, scene.gt_future, kind).value
