"""
Shapley 归因
============

把预测性能按周边智能体做 Shapley 分解：

- 精确 Shapley：枚举全部 2ⁿ 个联盟，每个联盟只求值一次
- ApproShapley：对偶（正序 + 逆序）采样的排列估计，带标准误
- Super-Agent 集合与 Δ_Super-All / Δ_No-All 差距报告
"""

import functools
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import comb

from ..config import logger, N_EXACT_MAX
from ..errors import CoalitionLimitError, InvalidArgumentError
from ..utils import _exact_mean, _parallel_map, _read_jsonl, _rng, _write_jsonl
from .metrics import MetricKind, SceneValueFunction
from .predictor import CoalitionEvaluator, PredictorModel
from .scene import Scene, inject_dummy_agent

ValueFn = Callable[[FrozenSet[int]], float]


class EstimatorKind(str, Enum):
    EXACT = "exact"
    APPRO = "appro"
    AUTO = "auto"


@dataclass
class AttributionResult:
    """
    单个场景、单个指标的 Shapley 归因

    Attributes:
        phi: agent_id → φᵢ
        stderr: agent_id → 标准误（精确估计为 0）
        permutations: ApproShapley 的排列数 M
    """

    scene_id: int
    metric: MetricKind
    phi: Dict[int, float]
    estimator: EstimatorKind
    stderr: Dict[int, float]
    v_empty: float
    v_full: float
    permutations: Optional[int] = None
    seed: Optional[int] = None
    inference_seed: int = 0
    evaluations: int = 0

    @property
    def efficiency_gap(self) -> float:
        """Σφᵢ − (v_full − v_empty)"""
        return math.fsum(self.phi.values()) - (self.v_full - self.v_empty)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scene_id": self.scene_id,
            "metric": self.metric.label,
            "estimator": self.estimator.value,
            "permutations": self.permutations,
            "seed": self.seed,
            "inference_seed": self.inference_seed,
            "evaluations": self.evaluations,
            "v_empty": self.v_empty,
            "v_full": self.v_full,
            "phi": [[int(k), float(v)] for k, v in self.phi.items()],
            "stderr": [[int(k), float(v)] for k, v in self.stderr.items()],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AttributionResult":
        return cls(
            scene_id=int(d["scene_id"]), metric=MetricKind.parse(d["metric"]),
            phi={int(k): float(v) for k, v in d["phi"]},
            estimator=EstimatorKind(d["estimator"]),
            stderr={int(k): float(v) for k, v in d["stderr"]},
            v_empty=float(d["v_empty"]), v_full=float(d["v_full"]),
            permutations=d.get("permutations"), seed=d.get("seed"),
            inference_seed=int(d.get("inference_seed", 0)), evaluations=int(d.get("evaluations", 0)),
        )


@dataclass(frozen=True)
class SuperAgentSet:
    """φ_{i,NLL} < 0 的智能体集合"""

    scene_id: int
    members: FrozenSet[int]
    metric: MetricKind = field(default_factory=MetricKind.nll)


@dataclass(frozen=True)
class GapReport:
    """数据集级别的 All / Super / None 三种条件对比"""

    metric: MetricKind
    m_all: float
    m_super: float
    m_none: float
    delta_super_all: float
    delta_no_all: float
    n_scenes: int

    @classmethod
    def from_means(cls, metric: MetricKind, m_all: float, m_super: float, m_none: float, n_scenes: int) -> "GapReport":
        return cls(metric, m_all, m_super, m_none, m_super - m_all, m_none - m_all, n_scenes)


# ============================================================
# 核心估计器（只依赖价值函数）
# ============================================================


def _coalition(players: Sequence[int], mask: int) -> FrozenSet[int]:
    return frozenset(p for j, p in enumerate(players) if mask >> j & 1)


def shapley_from_value_fn(value_fn: ValueFn, players: Sequence[int], use_cache: bool = True) -> Dict[int, float]:
    """
    精确 Shapley 值

    φᵢ = Σ_{S ⊆ N∖{i}} |S|!(n−|S|−1)!/n! · (v(S ∪ {i}) − v(S))

    Args:
        value_fn: 联盟 → 价值
        players: 参与者 id
        use_cache: True 时先把 2ⁿ 个联盟的价值各求一次存表；False 时每次需要都重新调用 value_fn

    Returns:
        player → φ
    """
    players = list(players)
    n = len(players)
    if n == 0:
        return {}
    size = 1 << n
    if use_cache:
        table = [value_fn(_coalition(players, mask)) for mask in range(size)]
        lookup = table.__getitem__
    else:
        def lookup(mask: int) -> float:
            return value_fn(_coalition(players, mask))

    weights = [1.0 / (n * comb(n - 1, s, exact=True)) for s in range(n)]
    phi = {}
    for j, player in enumerate(players):
        bit = 1 << j
        total = 0.0
        for mask in range(size):
            if mask & bit:
                continue
            total += weights[bin(mask).count("1")] * (lookup(mask | bit) - lookup(mask))
        phi[player] = total
    return phi


def appro_from_value_fn(
    value_fn: ValueFn,
    players: Sequence[int],
    permutations: int,
    rng: np.random.Generator
) -> Tuple[Dict[int, float], Dict[int, float]]:
    """
    排列采样的 Shapley 估计（对偶采样：每个排列后紧跟其逆序）

    每个排列上的边际贡献之和逐项抵消为 v(N) − v(∅)。

    Returns:
        (φ, 标准误)；标准误 = 样本标准差 / √M，M = 1 时为 0
    """
    if permutations < 1:
        raise InvalidArgumentError(f"排列数 M 必须 ≥ 1，当前 {permutations}")
    players = list(players)
    n = len(players)
    if n == 0:
        return {}, {}
    samples = np.zeros((permutations, n))
    index = {p: j for j, p in enumerate(players)}
    v_empty = value_fn(frozenset())
    perm: List[int] = []
    for m in range(permutations):
        perm = list(rng.permutation(players)) if m % 2 == 0 else perm[::-1]
        prev, members = v_empty, set()
        for player in perm:
            members.add(int(player))
            cur = value_fn(frozenset(members))
            samples[m, index[int(player)]] = cur - prev
            prev = cur
    phi = samples.mean(axis=0)
    if permutations > 1:
        stderr = samples.std(axis=0, ddof=1) / math.sqrt(permutations)
    else:
        stderr = np.zeros(n)
    return ({p: float(phi[j]) for j, p in enumerate(players)},
            {p: float(stderr[j]) for j, p in enumerate(players)})


# ============================================================
# 模型上的归因
# ============================================================


def shapley_exact(
    model: PredictorModel,
    scene: Scene,
    metric: MetricKind,
    use_cache: bool = True,
    inference_seed: int = 0,
    stochastic: bool = False,
    n_exact_max: int = N_EXACT_MAX,
    evaluator: Optional[CoalitionEvaluator] = None
) -> AttributionResult:
    """
    精确 Shapley 归因

    Raises:
        CoalitionLimitError: 周边智能体数超过 n_exact_max
    """
    n = scene.n_agents
    if n > n_exact_max:
        raise CoalitionLimitError(
            f"scene {scene.scene_id} 有 {n} 个周边智能体，超过精确 Shapley 上限 {n_exact_max}"
            f"（需要 2^{n} 次求值）。请改用 ApproShapley: shapley_appro(...) 或 `--estimator appro`"
        )
    value_fn = SceneValueFunction(model, scene, metric, inference_seed, stochastic, use_cache, evaluator)
    phi = shapley_from_value_fn(value_fn, scene.agent_ids, use_cache)
    return AttributionResult(
        scene_id=scene.scene_id, metric=metric, phi=phi, estimator=EstimatorKind.EXACT,
        stderr={i: 0.0 for i in scene.agent_ids},
        v_empty=value_fn(frozenset()), v_full=value_fn(frozenset(scene.agent_ids)),
        inference_seed=inference_seed, evaluations=value_fn.evaluations,
    )


def shapley_appro(
    model: PredictorModel,
    scene: Scene,
    metric: MetricKind,
    permutations: int = 2000,
    seed: int = 0,
    inference_seed: int = 0,
    stochastic: bool = False,
    evaluator: Optional[CoalitionEvaluator] = None
) -> AttributionResult:
    """
    ApproShapley 归因

    随机流由 (seed, scene_id) 派生，相同种子得到相同结果。
    """
    value_fn = SceneValueFunction(model, scene, metric, inference_seed, stochastic, True, evaluator)
    phi, stderr = appro_from_value_fn(value_fn, scene.agent_ids, permutations, _rng(seed, scene.scene_id))
    return AttributionResult(
        scene_id=scene.scene_id, metric=metric, phi=phi, estimator=EstimatorKind.APPRO,
        stderr=stderr, v_empty=value_fn(frozenset()), v_full=value_fn(frozenset(scene.agent_ids)),
        permutations=permutations, seed=seed, inference_seed=inference_seed,
        evaluations=value_fn.evaluations,
    )


def attribute_scene(
    model: PredictorModel,
    scene: Scene,
    metrics: Sequence[MetricKind],
    estimator: EstimatorKind = EstimatorKind.AUTO,
    permutations: int = 2000,
    seed: int = 0,
    inference_seed: int = 0,
    stochastic: bool = False,
    n_exact_max: int = N_EXACT_MAX
) -> List[AttributionResult]:
    """对一个场景计算多个指标的归因，共享同一个联盟求值器"""
    estimator = EstimatorKind(estimator)
    if estimator == EstimatorKind.AUTO:
        estimator = EstimatorKind.EXACT if scene.n_agents <= n_exact_max else EstimatorKind.APPRO
    evaluator = CoalitionEvaluator(model, scene, inference_seed, stochastic)
    results = []
    for metric in metrics:
        if estimator == EstimatorKind.EXACT:
            results.append(shapley_exact(model, scene, metric, True, inference_seed, stochastic,
                                         n_exact_max, evaluator))
        else:
            results.append(shapley_appro(model, scene, metric, permutations, seed, inference_seed,
                                         stochastic, evaluator))
    return results


def attribute_dataset(
    model: PredictorModel,
    scenes: Sequence[Scene],
    metrics: Sequence[MetricKind],
    estimator: EstimatorKind = EstimatorKind.AUTO,
    permutations: int = 2000,
    seed: int = 0,
    inference_seed: int = 0,
    stochastic: bool = False,
    n_exact_max: int = N_EXACT_MAX,
    workers: int = 1
) -> Dict[str, List[AttributionResult]]:
    """
    数据集级别归因

    场景按 scene_id 排序后并行处理，结果与 worker 数无关。

    Returns:
        指标标签 → 按 scene_id 排序的结果列表
    """
    ordered = sorted(scenes, key=lambda s: s.scene_id)
    if EstimatorKind(estimator) == EstimatorKind.EXACT:
        too_big = [s.scene_id for s in ordered if s.n_agents > n_exact_max]
        if too_big:
            raise CoalitionLimitError(
                f"{len(too_big)} 个场景的周边智能体数超过精确 Shapley 上限 {n_exact_max}"
                f"（scene_id: {too_big[:10]}）。请改用 `--estimator appro` 或 `--estimator auto`"
            )
    logger.info(f"正在计算 {len(ordered)} 个场景的归因 (estimator={EstimatorKind(estimator).value}, "
                f"metrics={[m.label for m in metrics]})...")
    job = functools.partial(
        attribute_scene, model, metrics=list(metrics), estimator=estimator, permutations=permutations,
        seed=seed, inference_seed=inference_seed, stochastic=stochastic, n_exact_max=n_exact_max,
    )
    per_scene = _parallel_map(job, ordered, workers)
    return {m.label: [results[j] for results in per_scene] for j, m in enumerate(metrics)}


# ============================================================
# Super Agents 与差距
# ============================================================


def super_agents(attr: AttributionResult) -> SuperAgentSet:
    """
    φ_{i,NLL} < 0（严格）的智能体

    Raises:
        InvalidArgumentError: 归因指标不是 NLL
    """
    if not attr.metric.is_nll:
        raise InvalidArgumentError(f"Super Agent 只能由 NLL 归因定义，当前指标 {attr.metric.label}")
    return SuperAgentSet(scene_id=attr.scene_id, members=frozenset(i for i, v in attr.phi.items() if v < 0))


def _as_super_map(scenes: Sequence[Scene], super_sets) -> Dict[int, SuperAgentSet]:
    if isinstance(super_sets, Mapping):
        mapping = dict(super_sets)
    else:
        mapping = {s.scene_id: s for s in super_sets}
    missing = sorted(s.scene_id for s in scenes if s.scene_id not in mapping)
    extra = sorted(set(mapping) - {s.scene_id for s in scenes})
    if missing or extra:
        raise InvalidArgumentError(f"Super 集合与场景不匹配: 缺少 {missing[:10]}，多余 {extra[:10]}")
    for scene in scenes:
        unknown = mapping[scene.scene_id].members - set(scene.agent_ids)
        if unknown:
            raise InvalidArgumentError(f"scene {scene.scene_id}: Super 集合包含未知 agent_id {sorted(unknown)}")
    return mapping


def _gap_values(
    model: PredictorModel,
    scene: Scene,
    members: FrozenSet[int],
    metric: MetricKind,
    inference_seed: int
) -> Tuple[float, float, float]:
    value_fn = SceneValueFunction(model, scene, metric, inference_seed)
    return value_fn(frozenset(scene.agent_ids)), value_fn(members), value_fn(frozenset())


def gap_report(
    model: PredictorModel,
    scenes: Sequence[Scene],
    metric: MetricKind,
    super_sets,
    inference_seed: int = 0,
    workers: int = 1
) -> GapReport:
    """
    keep = All / Super / ∅ 三种条件下的数据集平均指标

    Args:
        super_sets: SuperAgentSet 列表或 scene_id → SuperAgentSet（由 NLL 定义，即使 metric 不同）

    Raises:
        InvalidArgumentError: 场景与 Super 集合不匹配
    """
    if not scenes:
        raise InvalidArgumentError("gap_report 需要至少一个场景")
    mapping = _as_super_map(scenes, super_sets)
    ordered = sorted(scenes, key=lambda s: s.scene_id)
    job = functools.partial(_gap_scene, model, metric=metric, mapping=mapping, inference_seed=inference_seed)
    rows = _parallel_map(job, ordered, workers)
    return GapReport.from_means(
        metric,
        _exact_mean(r[0] for r in rows), _exact_mean(r[1] for r in rows), _exact_mean(r[2] for r in rows),
        len(rows),
    )


def _gap_scene(model, scene, metric, mapping, inference_seed):
    return _gap_values(model, scene, mapping[scene.scene_id].members, metric, inference_seed)


def dummy_agent_check(
    model: PredictorModel,
    scenes: Sequence[Scene],
    metric: MetricKind,
    seed: int = 0,
    n_exact_max: int = N_EXACT_MAX
) -> List[float]:
    """
    注入远处静止的虚拟智能体后它得到的 |φ|

    只处理注入后仍可精确枚举的场景。
    """
    magnitudes = []
    for scene in scenes:
        if scene.n_agents + 1 > n_exact_max:
            continue
        injected, dummy_id = inject_dummy_agent(scene, seed)
        result = shapley_exact(model, injected, metric, n_exact_max=n_exact_max)
        magnitudes.append(abs(result.phi[dummy_id]))
    return magnitudes


# ============================================================
# 持久化
# ============================================================


def save_attributions(path: Path, results: Sequence[AttributionResult], metadata: Mapping[str, Any]) -> Path:
    """每行一个场景；每行都带上运行元数据（模型校验和、指标、估计器、种子）"""
    meta = dict(metadata)
    return _write_jsonl(path, ({"meta": meta, **r.to_dict()} for r in results))


def load_attributions(path: Path) -> Tuple[List[AttributionResult], Dict[str, Any]]:
    records = _read_jsonl(path)
    meta = records[0].get("meta", {}) if records else {}
    return [AttributionResult.from_dict(r) for r in records], meta
