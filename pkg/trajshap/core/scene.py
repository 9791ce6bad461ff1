"""
场景模型
========

定义场景/智能体数据模型，并按已知因果结构程序化生成带标签的合成交通场景。

场景坐标系以目标车辆最后一个历史时刻为原点、其航向为 x 轴。
"""

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..config import logger, SCENE_FLOAT_DIGITS, STATE_DIM
from ..errors import ConfigError, InvalidArgumentError
from ..utils import (
    _dataclass_keys, _load_flat_file, _parse_dataclass, _read_jsonl,
    _reject_unknown_keys, _rng, _write_jsonl
)


# ============================================================
# 枚举
# ============================================================


class AgentRole(str, Enum):
    TARGET = "target"
    SURROUNDING = "surrounding"


class CausalLabel(str, Enum):
    CAUSAL = "causal"
    NON_CAUSAL = "noncausal"
    UNLABELED = "unlabeled"


class GeneratorKind(str, Enum):
    LEADER_FOLLOWER = "leader_follower"
    INDEPENDENT = "independent"
    SPURIOUS_DISTRACTOR = "spurious_distractor"
    MIXED = "mixed"


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"


# ============================================================
# 数据类型
# ============================================================


def _wrap_angle(theta):
    """把角度折回 [−π, π)"""
    return (np.asarray(theta) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class AgentState:
    """单个时刻的智能体状态 {x, y, vx, vy, w, l, θ}"""

    x: float
    y: float
    vx: float
    vy: float
    w: float
    l: float
    theta: float

    def __post_init__(self):
        _validate_states(np.array([self.as_array()]), "AgentState")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, self.w, self.l, self.theta], dtype=np.float64)


def _validate_states(arr: np.ndarray, where: str) -> None:
    if arr.ndim != 2 or arr.shape[1] != STATE_DIM:
        raise InvalidArgumentError(f"{where}: 状态数组形状应为 (T, {STATE_DIM})，实际 {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{where}: 状态包含非有限值")
    if np.any(arr[:, 4] <= 0) or np.any(arr[:, 5] <= 0):
        raise InvalidArgumentError(f"{where}: 宽度和长度必须为正")
    if np.any(arr[:, 6] < -np.pi) or np.any(arr[:, 6] >= np.pi):
        raise InvalidArgumentError(f"{where}: 航向角必须位于 [−π, π)")


def _frozen_array(data: Any, where: str) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, STATE_DIM)
    _validate_states(arr, where)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AgentTrack:
    """
    一个智能体的轨迹

    history 为 (H, 7) 只读数组；future 为 (F, 7) 只读数组或 None。
    """

    agent_id: int
    role: AgentRole
    history: np.ndarray
    future: Optional[np.ndarray] = None
    causal_label: CausalLabel = CausalLabel.UNLABELED

    def __post_init__(self):
        where = f"agent {self.agent_id}"
        object.__setattr__(self, "role", AgentRole(self.role))
        object.__setattr__(self, "causal_label", CausalLabel(self.causal_label))
        object.__setattr__(self, "history", _frozen_array(self.history, where + " history"))
        if self.future is not None:
            object.__setattr__(self, "future", _frozen_array(self.future, where + " future"))
        if self.role == AgentRole.TARGET and self.future is None:
            raise InvalidArgumentError(f"{where}: 目标智能体必须带有未来轨迹")

    def states(self) -> List[AgentState]:
        """历史状态的 AgentState 列表"""
        return [AgentState(*row) for row in self.history.tolist()]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AgentTrack):
            return NotImplemented
        same_future = (
            (self.future is None and other.future is None)
            or (self.future is not None and other.future is not None
                and np.array_equal(self.future, other.future))
        )
        return (
            self.agent_id == other.agent_id
            and self.role == other.role
            and self.causal_label == other.causal_label
            and np.array_equal(self.history, other.history)
            and same_future
        )


@dataclass(frozen=True, eq=False)
class Scene:
    """预测与归因的基本单元：一个目标智能体 + 有序的周边智能体列表"""

    scene_id: int
    target: AgentTrack
    surrounding: Tuple[AgentTrack, ...]
    generator_kind: GeneratorKind
    rng_seed: int
    split: Split = Split.TRAIN

    def __post_init__(self):
        object.__setattr__(self, "surrounding", tuple(self.surrounding))
        object.__setattr__(self, "generator_kind", GeneratorKind(self.generator_kind))
        object.__setattr__(self, "split", Split(self.split))
        if self.target.role != AgentRole.TARGET:
            raise InvalidArgumentError(f"scene {self.scene_id}: target 的角色必须是 Target")
        ids = [self.target.agent_id]
        for agent in self.surrounding:
            if agent.role != AgentRole.SURROUNDING:
                raise InvalidArgumentError(f"scene {self.scene_id}: 每个场景只能有一个 Target")
            if agent.history.shape[0] != self.target.history.shape[0]:
                raise InvalidArgumentError(f"scene {self.scene_id}: agent {agent.agent_id} 的历史长度不一致")
            ids.append(agent.agent_id)
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError(f"scene {self.scene_id}: agent_id 重复")

    @property
    def agent_ids(self) -> Tuple[int, ...]:
        """周边智能体 id（按场景顺序）"""
        return tuple(a.agent_id for a in self.surrounding)

    @property
    def n_agents(self) -> int:
        return len(self.surrounding)

    @property
    def history_steps(self) -> int:
        return self.target.history.shape[0]

    @property
    def future_steps(self) -> int:
        return self.target.future.shape[0]

    @property
    def gt_future(self) -> np.ndarray:
        """目标智能体未来位置 (F, 2)"""
        return self.target.future[:, :2]

    def agent(self, agent_id: int) -> AgentTrack:
        for a in self.surrounding:
            if a.agent_id == agent_id:
                return a
        raise InvalidArgumentError(f"scene {self.scene_id}: 未知的 agent_id {agent_id}")

    def causal_labels(self) -> Dict[int, CausalLabel]:
        return {a.agent_id: a.causal_label for a in self.surrounding}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.generator_kind == other.generator_kind
            and self.rng_seed == other.rng_seed
            and self.split == other.split
            and self.target == other.target
            and self.surrounding == other.surrounding
        )


# ============================================================
# 屏蔽
# ============================================================


def _check_keep(scene: Scene, keep: Optional[Iterable[int]]) -> FrozenSet[int]:
    """校验保留集合；None 表示全部保留"""
    if keep is None:
        return frozenset(scene.agent_ids)
    keep = frozenset(int(k) for k in keep)
    unknown = keep - set(scene.agent_ids)
    if unknown:
        raise InvalidArgumentError(
            f"scene {scene.scene_id}: 保留集合包含未知的周边 agent_id {sorted(unknown)}"
        )
    return keep


def mask_scene(scene: Scene, keep: Iterable[int]) -> Scene:
    """
    只保留 keep 中的周边智能体

    Args:
        scene: 原场景（不会被修改）
        keep: 要保留的周边 agent_id 集合（目标不可被屏蔽）

    Returns:
        保持原顺序、只含被保留智能体的新场景

    Raises:
        InvalidArgumentError: keep 包含未知 id
    """
    keep = _check_keep(scene, keep)
    return dataclasses.replace(scene, surrounding=tuple(a for a in scene.surrounding if a.agent_id in keep))


def inject_dummy_agent(scene: Scene, seed: int) -> Tuple[Scene, int]:
    """
    注入一个远处静止的虚拟智能体（NonCausal）

    用作归因的健全性检查：对目标无影响的智能体应得到接近 0 的 Shapley 值。

    Returns:
        (新场景, 虚拟智能体 id)
    """
    rng = _rng(seed, scene.scene_id, 7919)
    dummy_id = max((scene.target.agent_id,) + scene.agent_ids) + 1
    H = scene.history_steps
    x = float(rng.uniform(60.0, 90.0)) * (1.0 if rng.random() < 0.5 else -1.0)
    y = float(rng.uniform(15.0, 25.0)) * (1.0 if rng.random() < 0.5 else -1.0)
    row = [x, y, 0.0, 0.0, 1.9, 4.5, 0.0]
    dummy = AgentTrack(
        agent_id=dummy_id,
        role=AgentRole.SURROUNDING,
        history=np.tile(row, (H, 1)),
        future=np.tile(row, (scene.future_steps, 1)),
        causal_label=CausalLabel.NON_CAUSAL,
    )
    return dataclasses.replace(scene, surrounding=scene.surrounding + (dummy,)), dummy_id


# ============================================================
# 生成器配置
# ============================================================


@dataclass
class GeneratorConfig:
    """合成场景生成器配置"""

    history_steps: int = 10
    future_steps: int = 12
    dt: float = 0.5
    max_agents: int = 12
    n_leader_follower: int = 100
    n_independent: int = 50
    n_spurious: int = 50
    n_mixed: int = 100
    min_extra_agents: int = 0
    max_extra_agents: int = 3
    reaction_steps: int = 2
    brake_probability: float = 0.5
    position_noise: float = 0.05
    spurious_sigma: float = 0.1
    spurious_correlation_train: float = 1.0
    spurious_correlation_val: float = 0.0
    split: Split = Split.TRAIN

    def validate(self) -> "GeneratorConfig":
        """校验配置，返回自身"""
        problems = []
        if self.history_steps <= 0:
            problems.append("history_steps 必须 > 0")
        if self.future_steps <= 0:
            problems.append("future_steps 必须 > 0")
        if self.dt <= 0:
            problems.append("dt 必须 > 0")
        for name in ("n_leader_follower", "n_independent", "n_spurious", "n_mixed",
                     "max_agents", "min_extra_agents", "max_extra_agents"):
            if getattr(self, name) < 0:
                problems.append(f"{name} 不能为负")
        if self.min_extra_agents > self.max_extra_agents:
            problems.append("min_extra_agents 不能大于 max_extra_agents")
        if not 1 <= self.reaction_steps < max(self.history_steps, 2):
            problems.append("reaction_steps 必须位于 [1, history_steps)")
        for name in ("brake_probability", "spurious_correlation_train", "spurious_correlation_val"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} 必须位于 [0, 1]")
        if self.position_noise < 0 or self.spurious_sigma < 0:
            problems.append("噪声尺度不能为负")
        if problems:
            raise ConfigError("生成器配置无效: " + "; ".join(problems))
        self.split = Split(self.split)
        return self

    @property
    def spurious_correlation(self) -> float:
        return self.spurious_correlation_train if self.split == Split.TRAIN else self.spurious_correlation_val


def load_generator_config(path: Path) -> GeneratorConfig:
    """从扁平键值文件读取 GeneratorConfig（未知键会被拒绝）"""
    values = _load_flat_file(path)
    _reject_unknown_keys(values, _dataclass_keys(GeneratorConfig), str(path))
    return _parse_dataclass(GeneratorConfig, values).validate()


# ============================================================
# 闭式动力学
# ============================================================


def follower_speed_profile(
    v0: float,
    leader_speeds: Optional[np.ndarray],
    reaction_steps: int,
    total_steps: Optional[int] = None
) -> np.ndarray:
    """
    跟驰车辆的闭式速度曲线

    跟随者在 reaction_steps 步之后复制前车的累计减速量；没有前车时保持匀速。

    Args:
        v0: 跟随者初速度
        leader_speeds: 前车逐步速度，None 表示前车被移除
        reaction_steps: 反应延迟（步）
        total_steps: 没有前车时的输出长度

    Returns:
        逐步速度数组
    """
    if leader_speeds is None:
        return np.full(int(total_steps), float(v0))
    leader_speeds = np.asarray(leader_speeds, dtype=np.float64)
    drop = leader_speeds[0] - leader_speeds
    speeds = np.full(leader_speeds.shape[0], float(v0))
    speeds[reaction_steps:] = np.maximum(0.0, v0 - drop[:-reaction_steps])
    return speeds


def _speed_change_profile(v0: float, decel: float, first_step: int, total: int, dt: float) -> np.ndarray:
    """从 first_step 起以恒定减速度 decel 变速（decel < 0 表示加速），速度不低于 0"""
    t = np.arange(total)
    steps_changing = np.clip(t - first_step + 1, 0, None)
    return np.maximum(0.0, v0 - decel * dt * steps_changing)


def _integrate(s0: float, speeds: np.ndarray, dt: float) -> np.ndarray:
    pos = np.empty_like(speeds)
    pos[0] = s0
    pos[1:] = s0 + dt * np.cumsum(speeds[1:])
    return pos


def _smooth_lateral(delta: float, start: int, total: int, span: int, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """从 start 开始、span 步内完成的平滑横向位移（三次平滑阶跃）及其速度"""
    t = np.arange(total, dtype=np.float64)
    tau = np.clip((t - start) / span, 0.0, 1.0)
    lat = delta * (3.0 * tau ** 2 - 2.0 * tau ** 3)
    inside = (t > start) & (t < start + span)
    vel = np.where(inside, delta * (6.0 * tau - 6.0 * tau ** 2) / (span * dt), 0.0)
    return lat, vel


# ============================================================
# 生成器
# ============================================================


@dataclass
class _Actor:
    """道路坐标系下的一个参与者（生成期间使用）"""

    s: np.ndarray
    lat: np.ndarray
    v: np.ndarray
    u: np.ndarray
    width: float
    length: float
    label: CausalLabel = CausalLabel.NON_CAUSAL

    def road_states(self) -> np.ndarray:
        theta = np.where((self.v == 0) & (self.u == 0), 0.0, np.arctan2(self.u, self.v))
        n = self.s.shape[0]
        return np.stack([
            self.s, self.lat, self.v, self.u,
            np.full(n, self.width), np.full(n, self.length), _wrap_angle(theta)
        ], axis=1)


def _to_world(states: np.ndarray, heading: float, offset: np.ndarray) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    out = states.copy()
    out[:, 0] = c * states[:, 0] - s * states[:, 1] + offset[0]
    out[:, 1] = s * states[:, 0] + c * states[:, 1] + offset[1]
    out[:, 2] = c * states[:, 2] - s * states[:, 3]
    out[:, 3] = s * states[:, 2] + c * states[:, 3]
    out[:, 6] = _wrap_angle(states[:, 6] + heading)
    return out


def to_target_frame(states: np.ndarray, origin: np.ndarray, heading: float) -> np.ndarray:
    """
    把世界坐标系状态变换到目标中心坐标系（平移 + 旋转，使目标航向为 0）

    Args:
        states: (T, 7) 世界坐标系状态
        origin: 目标在最后历史时刻的 (x, y)
        heading: 目标在最后历史时刻的航向

    Returns:
        (T, 7) 目标中心坐标系状态
    """
    c, s = math.cos(heading), math.sin(heading)
    out = states.copy()
    dx, dy = states[:, 0] - origin[0], states[:, 1] - origin[1]
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    out[:, 2] = c * states[:, 2] + s * states[:, 3]
    out[:, 3] = -s * states[:, 2] + c * states[:, 3]
    out[:, 6] = _wrap_angle(states[:, 6] - heading)
    return out


# 训练集与验证集使用不同的随机流
_SPLIT_STREAM = {Split.TRAIN: 0, Split.VALIDATION: 1}


class SceneGenerator:
    """
    合成交通场景生成器

    每个场景使用由 (seed, scene_id) 派生的独立随机流，因此结果与生成顺序和并行方式无关。
    """

    def __init__(self, config: GeneratorConfig):
        self.config = config.validate()
        self.total_steps = config.history_steps + config.future_steps

    def generate(self, seed: int) -> List[Scene]:
        cfg = self.config
        plan = (
            [GeneratorKind.LEADER_FOLLOWER] * cfg.n_leader_follower
            + [GeneratorKind.INDEPENDENT] * cfg.n_independent
            + [GeneratorKind.SPURIOUS_DISTRACTOR] * cfg.n_spurious
            + [GeneratorKind.MIXED] * cfg.n_mixed
        )
        logger.info(f"正在生成 {len(plan)} 个场景 (split={cfg.split.value}, seed={seed})...")
        return [self.generate_scene(seed, scene_id, kind) for scene_id, kind in enumerate(plan)]

    def generate_scene(self, seed: int, scene_id: int, kind: GeneratorKind) -> Scene:
        cfg = self.config
        rng = _rng(seed, _SPLIT_STREAM[cfg.split], scene_id)
        H = cfg.history_steps
        budget = cfg.max_agents

        target_v0 = float(rng.uniform(8.0, 14.0))
        target_speeds = np.full(self.total_steps, target_v0)
        target_lat = np.zeros(self.total_steps)
        target_u = np.zeros(self.total_steps)
        key_actors: List[_Actor] = []

        wants_leader = kind in (GeneratorKind.LEADER_FOLLOWER, GeneratorKind.MIXED)
        wants_distractor = kind in (GeneratorKind.SPURIOUS_DISTRACTOR, GeneratorKind.MIXED)

        if kind == GeneratorKind.INDEPENDENT:
            accel = float(rng.uniform(-0.8, 0.8))
            t = np.arange(self.total_steps)
            target_speeds = np.maximum(0.5, target_v0 + accel * cfg.dt * t)

        if wants_leader:
            leader = self._leader(rng, target_v0)
            if len(key_actors) < budget:
                key_actors.append(leader)
                target_speeds = follower_speed_profile(target_v0, leader.v, cfg.reaction_steps)

        if wants_distractor:
            span = cfg.future_steps
            delta = float(rng.uniform(-3.0, 3.0))
            target_lat, target_u = _smooth_lateral(delta, H - 1, self.total_steps, span, cfg.dt)
            distractor = self._distractor(rng, delta, target_v0)
            if len(key_actors) < budget:
                key_actors.append(distractor)

        target = _Actor(
            s=_integrate(0.0, target_speeds, cfg.dt), lat=target_lat, v=target_speeds, u=target_u,
            width=float(rng.uniform(1.8, 2.1)), length=float(rng.uniform(4.2, 5.0)),
        )
        # 让目标在最后历史时刻位于道路原点
        shift = target.s[H - 1]
        target.s = target.s - shift
        for actor in key_actors:
            actor.s = actor.s - shift

        extra_low = cfg.min_extra_agents if kind != GeneratorKind.INDEPENDENT else max(1, cfg.min_extra_agents)
        extra_high = max(cfg.max_extra_agents, extra_low)
        n_extra = int(rng.integers(extra_low, extra_high + 1))
        n_extra = max(0, min(n_extra, budget - len(key_actors)))
        actors = key_actors + [self._independent(rng) for _ in range(n_extra)]
        order = rng.permutation(len(actors))
        actors = [actors[i] for i in order]

        return self._assemble(rng, seed, scene_id, kind, target, actors)

    # ------------------------------------------------------------
    # 参与者
    # ------------------------------------------------------------

    def _leader(self, rng: np.random.Generator, target_v0: float) -> _Actor:
        cfg = self.config
        H = cfg.history_steps
        v0 = target_v0 + float(rng.uniform(-1.0, 1.0))
        gap = float(rng.uniform(15.0, 30.0))
        brakes = bool(rng.random() < cfg.brake_probability)
        # 不刹车的前车温和加速，保证前车在每个场景中都影响目标的未来
        decel = float(rng.uniform(1.5, 5.0)) if brakes else -float(rng.uniform(0.3, 1.0))
        first = int(rng.integers(H - cfg.reaction_steps, H))
        speeds = _speed_change_profile(v0, decel, first, self.total_steps, cfg.dt)
        # 前车初始位置：使其在 t=0 时领先目标 gap 米
        s = _integrate(gap, speeds, cfg.dt)
        return _Actor(
            s=s, lat=np.zeros(self.total_steps), v=speeds, u=np.zeros(self.total_steps),
            width=float(rng.uniform(1.8, 2.1)), length=float(rng.uniform(4.2, 5.0)),
            label=CausalLabel.CAUSAL,
        )

    def _distractor(self, rng: np.random.Generator, delta: float, target_v0: float) -> _Actor:
        cfg = self.config
        rho = cfg.spurious_correlation
        z = float(rng.uniform(-3.0, 3.0))
        noise = float(rng.normal(0.0, cfg.spurious_sigma)) if cfg.spurious_sigma > 0 else 0.0
        offset = rho * delta + math.sqrt(max(0.0, 1.0 - rho * rho)) * z + noise
        v = target_v0 + float(rng.uniform(-2.0, 2.0))
        speeds = np.full(self.total_steps, v)
        ahead = float(rng.uniform(8.0, 25.0)) * (1.0 if rng.random() < 0.7 else -1.0)
        return _Actor(
            s=_integrate(ahead, speeds, cfg.dt), lat=np.full(self.total_steps, offset + 5.0 * math.copysign(1.0, offset or 1.0)),
            v=speeds, u=np.zeros(self.total_steps),
            width=float(rng.uniform(1.8, 2.1)), length=float(rng.uniform(4.2, 5.0)),
        )

    def _independent(self, rng: np.random.Generator) -> _Actor:
        cfg = self.config
        lane = float(rng.choice([-7.0, -3.5, 3.5, 7.0]))
        direction = -1.0 if (abs(lane) > 5.0 and rng.random() < 0.5) else 1.0
        v0 = direction * float(rng.uniform(5.0, 15.0))
        accel = direction * float(rng.uniform(-0.5, 0.5))
        t = np.arange(self.total_steps)
        speeds = v0 + accel * cfg.dt * t
        if direction > 0:
            speeds = np.maximum(speeds, 0.0)
        else:
            speeds = np.minimum(speeds, 0.0)
        s0 = float(rng.uniform(-40.0, 50.0))
        return _Actor(
            s=_integrate(s0, speeds, cfg.dt), lat=np.full(self.total_steps, lane),
            v=speeds, u=np.zeros(self.total_steps),
            width=float(rng.uniform(1.7, 2.2)), length=float(rng.uniform(3.8, 5.5)),
        )

    # ------------------------------------------------------------
    # 组装
    # ------------------------------------------------------------

    def _assemble(
        self,
        rng: np.random.Generator,
        seed: int,
        scene_id: int,
        kind: GeneratorKind,
        target: _Actor,
        actors: List[_Actor]
    ) -> Scene:
        cfg = self.config
        H = cfg.history_steps
        heading = float(rng.uniform(-np.pi, np.pi))
        offset = rng.uniform(-500.0, 500.0, size=2)

        def world(actor: _Actor) -> np.ndarray:
            states = _to_world(actor.road_states(), heading, offset)
            if cfg.position_noise > 0:
                states[:H, :2] += rng.normal(0.0, cfg.position_noise, size=(H, 2))
            return states

        target_world = world(target)
        origin = target_world[H - 1, :2].copy()
        frame_heading = float(target_world[H - 1, 6])

        def track(states_world: np.ndarray, agent_id: int, role: AgentRole, label: CausalLabel) -> AgentTrack:
            local = to_target_frame(states_world, origin, frame_heading)
            return AgentTrack(agent_id=agent_id, role=role, history=local[:H], future=local[H:], causal_label=label)

        target_track = track(target_world, 0, AgentRole.TARGET, CausalLabel.UNLABELED)
        surrounding = [
            track(world(actor), i + 1, AgentRole.SURROUNDING, actor.label)
            for i, actor in enumerate(actors)
        ]
        return Scene(
            scene_id=scene_id, target=target_track, surrounding=tuple(surrounding),
            generator_kind=kind, rng_seed=seed, split=cfg.split,
        )


def generate_dataset(config: GeneratorConfig, seed: int) -> List[Scene]:
    """
    按配置生成一个数据集

    Args:
        config: 生成器配置
        seed: 数据集种子

    Returns:
        场景列表；相同 (config, seed) 永远得到逐位相同的结果

    Raises:
        ConfigError: 配置无效
    """
    return SceneGenerator(config).generate(seed)


# ============================================================
# JSON-lines 读写
# ============================================================


def _track_to_dict(track: AgentTrack) -> Dict[str, Any]:
    return {
        "agent_id": track.agent_id,
        "role": track.role.value,
        "causal_label": track.causal_label.value,
        "history": track.history.tolist(),
        "future": None if track.future is None else track.future.tolist(),
    }


def _track_from_dict(d: Dict[str, Any]) -> AgentTrack:
    return AgentTrack(
        agent_id=int(d["agent_id"]), role=AgentRole(d["role"]), history=d["history"],
        future=d.get("future"), causal_label=CausalLabel(d["causal_label"]),
    )


def scene_to_dict(scene: Scene) -> Dict[str, Any]:
    return {
        "scene_id": scene.scene_id,
        "generator_kind": scene.generator_kind.value,
        "rng_seed": scene.rng_seed,
        "split": scene.split.value,
        "target": _track_to_dict(scene.target),
        "surrounding": [_track_to_dict(a) for a in scene.surrounding],
    }


def scene_from_dict(d: Dict[str, Any]) -> Scene:
    return Scene(
        scene_id=int(d["scene_id"]), target=_track_from_dict(d["target"]),
        surrounding=tuple(_track_from_dict(a) for a in d["surrounding"]),
        generator_kind=GeneratorKind(d["generator_kind"]), rng_seed=int(d["rng_seed"]),
        split=Split(d.get("split", Split.TRAIN.value)),
    )


def save_scenes(path: Path, scenes: Sequence[Scene]) -> Path:
    """每行一个场景写出 JSON-lines；浮点数写出 17 位有效数字，逐位可还原"""
    return _write_jsonl(path, (scene_to_dict(s) for s in scenes), float_digits=SCENE_FLOAT_DIGITS)


def load_scenes(path: Path) -> List[Scene]:
    return [scene_from_dict(d) for d in _read_jsonl(path)]
