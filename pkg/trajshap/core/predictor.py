"""
轨迹预测器
==========

编码器 - 交互器 - 解码器结构的多模态轨迹预测器，输出 K 模态高斯混合。

- 目标编码器与周边编码器都是两层 tanh MLP，周边编码器在所有智能体间共享权重
- 可选的 CIB 层放在周边编码器之后，以目标嵌入为条件
- 交互器：以目标嵌入为查询的多头交叉注意力 + 两层前馈
- 解码器：模态 logits、相对匀速外推的位置残差、带下限的标准差

推理时每个智能体单独编码，被屏蔽的智能体直接从注意力集合中移除。
"""

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..config import (
    logger, CHECKPOINT_FORMAT, CHECKPOINT_VERSION, FEATURE_SCALE, MASK_BIAS,
    POSITION_SCALE, STATE_DIM
)
from ..errors import CheckpointError, ConfigError, InvalidArgumentError, TrainingError
from ..utils import _canonical_json, _rng, _sha256_bytes, _write_text
from . import tensor as T
from .cib import CIBMode, CIBParams, cib_forward, cib_forward_batch, cib_loss_term, cib_parameter_shapes
from .scene import Scene, _check_keep
from .tensor import Tensor


# ============================================================
# 配置
# ============================================================


@dataclass
class PredictorConfig:
    """预测器结构配置；参数名与形状完全由它决定"""

    d_model: int = 32
    K: int = 6
    H: int = 10
    F: int = 12
    n_heads: int = 4
    use_cib: bool = False
    beta: float = 0.0
    seed: int = 0
    dt: float = 0.5
    sigma_min: float = 0.1
    d_z: Optional[int] = None

    def validate(self) -> "PredictorConfig":
        problems = []
        if self.K < 1:
            problems.append("K 必须 ≥ 1")
        if self.d_model < 1 or self.n_heads < 1 or self.d_model % self.n_heads != 0:
            problems.append("d_model 必须能被 n_heads 整除")
        if self.beta < 0:
            problems.append("beta 必须 ≥ 0")
        if self.H < 1 or self.F < 1:
            problems.append("H 与 F 必须 ≥ 1")
        if self.dt <= 0 or self.sigma_min <= 0:
            problems.append("dt 与 sigma_min 必须 > 0")
        if self.d_z is not None and not 1 <= self.d_z <= self.d_model:
            problems.append("d_z 必须位于 [1, d_model]")
        if problems:
            raise ConfigError("预测器配置无效: " + "; ".join(problems))
        return self

    @property
    def latent_dim(self) -> int:
        return self.d_z if self.d_z is not None else max(1, self.d_model // 2)

    @property
    def d_ff(self) -> int:
        return 2 * self.d_model

    @property
    def effective_beta(self) -> float:
        return self.beta if self.use_cib else 0.0


@dataclass
class OptimizerConfig:
    """Adam 优化器与训练循环配置"""

    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    clip_norm: float = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> "OptimizerConfig":
        if self.lr <= 0 or self.epochs < 0 or self.batch_size < 1 or self.clip_norm <= 0:
            raise ConfigError("优化器配置无效: 需要 lr > 0, epochs ≥ 0, batch_size ≥ 1, clip_norm > 0")
        return self


def parameter_shapes(config: PredictorConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """按初始化顺序列出全部参数的名称与形状"""
    d, k, f = config.d_model, config.K, config.F
    n_in = config.H * STATE_DIM
    shapes = [
        ("target_enc.w1", (n_in, d)), ("target_enc.b1", (d,)),
        ("target_enc.w2", (d, d)), ("target_enc.b2", (d,)),
        ("agent_enc.w1", (n_in, d)), ("agent_enc.b1", (d,)),
        ("agent_enc.w2", (d, d)), ("agent_enc.b2", (d,)),
    ]
    if config.use_cib:
        shapes += cib_parameter_shapes(d, config.latent_dim)
    shapes += [
        ("interactor.w_q", (d, d)), ("interactor.w_k", (d, d)),
        ("interactor.w_v", (d, d)), ("interactor.w_o", (d, d)),
        ("ffn.w1", (d, config.d_ff)), ("ffn.b1", (config.d_ff,)),
        ("ffn.w2", (config.d_ff, d)), ("ffn.b2", (d,)),
        ("decoder.w_logit", (d, k)), ("decoder.b_logit", (k,)),
        ("decoder.w_mu", (d, k * f * 2)), ("decoder.b_mu", (k * f * 2,)),
        ("decoder.w_sigma", (d, k * f * 2)), ("decoder.b_sigma", (k * f * 2,)),
    ]
    return shapes


# 解码器输出层的初始化增益
_OUTPUT_GAIN = {"decoder.w_mu": 0.1, "decoder.w_sigma": 0.1, "decoder.w_logit": 0.1}


def _initialize(config: PredictorConfig) -> Dict[str, Tensor]:
    rng = _rng(config.seed)
    params = {}
    for name, shape in parameter_shapes(config):
        if name.startswith("cib."):
            # CIB 块连续排列，首次遇到时整体初始化
            if name not in params:
                params.update(CIBParams.initialize(rng, config.d_model, config.latent_dim).tensors)
            continue
        if len(shape) == 2:
            data = rng.standard_normal(shape) / np.sqrt(shape[0]) * _OUTPUT_GAIN.get(name, 1.0)
        else:
            data = np.zeros(shape)
        if name == "decoder.b_sigma":
            data[:] = 0.5
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


# ============================================================
# 预测结果
# ============================================================


@dataclass(eq=False)
class MixturePrediction:
    """
    K 模态高斯混合预测

    Attributes:
        modes: (K, F, 2) 各模态的位置均值（米）
        sigmas: (K, F, 2) 各模态的标准差（米）
        mode_probs: (K,) 模态概率
        log_probs: (K,) 模态对数概率
    """

    modes: np.ndarray
    sigmas: np.ndarray
    mode_probs: np.ndarray
    log_probs: np.ndarray

    def __post_init__(self):
        K = self.mode_probs.shape[0]
        if self.modes.shape[0] != K or self.sigmas.shape != self.modes.shape or self.modes.shape[-1] != 2:
            raise InvalidArgumentError(
                f"MixturePrediction 形状不一致: modes {self.modes.shape}, sigmas {self.sigmas.shape}, probs {self.mode_probs.shape}"
            )
        if abs(float(self.mode_probs.sum()) - 1.0) > 1e-9 or np.any(self.mode_probs < 0):
            raise InvalidArgumentError("模态概率必须非负且和为 1")
        if np.any(self.sigmas <= 0):
            raise InvalidArgumentError("σ 必须为正")

    @property
    def K(self) -> int:
        return self.mode_probs.shape[0]

    @property
    def F(self) -> int:
        return self.modes.shape[1]

    @classmethod
    def from_log_probs(cls, modes: np.ndarray, sigmas: np.ndarray, log_probs: np.ndarray) -> "MixturePrediction":
        log_probs = np.asarray(log_probs, dtype=np.float64)
        return cls(modes=np.asarray(modes, dtype=np.float64), sigmas=np.asarray(sigmas, dtype=np.float64),
                   mode_probs=np.exp(log_probs), log_probs=log_probs)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MixturePrediction):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("modes", "sigmas", "mode_probs", "log_probs"))


# ============================================================
# 特征
# ============================================================


_SCALE = np.asarray(FEATURE_SCALE, dtype=np.float64)


def _track_features(history: np.ndarray) -> np.ndarray:
    """(H, 7) 历史 → 归一化后展平的 (H·7,) 特征"""
    return (history / _SCALE).reshape(-1)


def _cv_anchor(history: np.ndarray, F: int, dt: float) -> np.ndarray:
    """由最后一个历史状态做匀速外推，得到 (F, 2)"""
    last = history[-1]
    steps = np.arange(1, F + 1, dtype=np.float64)[:, None] * dt
    return last[None, :2] + steps * last[None, 2:4]


# ============================================================
# 模型
# ============================================================


def _dense(x: Tensor, params: Dict[str, Tensor], prefix: str, layer: str) -> Tensor:
    return T.add(T.matmul(x, params[f"{prefix}.w{layer}"]), params[f"{prefix}.b{layer}"])


def _mlp(x: Tensor, params: Dict[str, Tensor], prefix: str) -> Tensor:
    hidden = T.tanh(_dense(x, params, prefix, "1"))
    return T.tanh(_dense(hidden, params, prefix, "2"))


class PredictorModel:
    """
    被分析的预测器

    parameters 是名称到可训练张量的映射；推理时使用数据的只读快照。
    """

    def __init__(self, config: PredictorConfig, parameters: Optional[Dict[str, Tensor]] = None):
        self.config = config.validate()
        self.parameters = parameters if parameters is not None else _initialize(config)
        expected = parameter_shapes(config)
        if [n for n, _ in expected] != list(self.parameters):
            raise InvalidArgumentError("参数名与配置不一致")

    # ------------------------------------------------------------
    # 参数
    # ------------------------------------------------------------

    def frozen(self) -> Dict[str, Tensor]:
        """不参与求导的参数快照"""
        return {name: Tensor(p.data, name=name) for name, p in self.parameters.items()}

    def cib_params(self, params: Optional[Dict[str, Tensor]] = None) -> Optional[CIBParams]:
        if not self.config.use_cib:
            return None
        params = params if params is not None else self.parameters
        return CIBParams({n: p for n, p in params.items() if n.startswith("cib.")})

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([p.data.reshape(-1) for p in self.parameters.values()])

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters.values()))

    def checksum(self) -> str:
        """配置 + 参数的 SHA-256"""
        payload = _canonical_json({"config": asdict(self.config),
                                   "parameters": {n: p.data.reshape(-1).tolist() for n, p in self.parameters.items()}})
        return _sha256_bytes(payload.encode("utf-8"))

    def copy(self) -> "PredictorModel":
        params = {n: Tensor(p.data, requires_grad=True, name=n) for n, p in self.parameters.items()}
        return PredictorModel(self.config, params)

    # ------------------------------------------------------------
    # 编码
    # ------------------------------------------------------------

    def encode_target(self, scene: Scene, params: Optional[Dict[str, Tensor]] = None) -> Tensor:
        """
        目标编码器

        只依赖目标历史；返回形状 (1, d_model)。
        """
        params = params if params is not None else self.frozen()
        self._check_scene(scene)
        x = Tensor(_track_features(scene.target.history)[None, :])
        return _mlp(x, params, "target_enc")

    def encode_surrounding(
        self,
        scene: Scene,
        keep: Optional[Iterable[int]] = None,
        params: Optional[Dict[str, Tensor]] = None
    ) -> List[Tensor]:
        """
        周边编码器（共享权重）

        每个被保留的智能体单独编码，嵌入只依赖它自己的轨迹。

        Returns:
            按场景顺序排列的 (1, d_model) 嵌入列表
        """
        params = params if params is not None else self.frozen()
        self._check_scene(scene)
        keep = _check_keep(scene, keep)
        return [
            _mlp(Tensor(_track_features(a.history)[None, :]), params, "agent_enc")
            for a in scene.surrounding if a.agent_id in keep
        ]

    def _check_scene(self, scene: Scene) -> None:
        if scene.history_steps != self.config.H:
            raise InvalidArgumentError(
                f"scene {scene.scene_id}: 历史长度 {scene.history_steps} 与模型 H={self.config.H} 不一致"
            )

    # ------------------------------------------------------------
    # 交互与解码
    # ------------------------------------------------------------

    def _interact(
        self,
        params: Dict[str, Tensor],
        target: Tensor,
        agents: Optional[Tensor],
        bias: Optional[np.ndarray] = None,
        has_agents: Optional[np.ndarray] = None
    ) -> Tensor:
        """
        目标查询的多头交叉注意力 + 前馈

        Args:
            target: (B, d)
            agents: (B, N, d)；None 表示没有智能体，跳过注意力
            bias: (B, h, 1, N) 加性屏蔽偏置
            has_agents: (B, d) 指示该行是否有任何智能体
        """
        cfg = self.config
        B, d = target.shape
        h = cfg.n_heads
        dh = d // h
        if agents is None:
            hidden = target
        else:
            N = agents.shape[1]
            q = T.reshape(T.matmul(target, params["interactor.w_q"]), (B, h, 1, dh))
            k = T.transpose(T.reshape(T.matmul(agents, params["interactor.w_k"]), (B, N, h, dh)), (0, 2, 3, 1))
            v = T.transpose(T.reshape(T.matmul(agents, params["interactor.w_v"]), (B, N, h, dh)), (0, 2, 1, 3))
            scores = T.mul(T.matmul(q, k), 1.0 / math.sqrt(dh))
            if bias is not None:
                scores = T.add(scores, bias)
            attn = T.softmax(scores, axis=-1)
            context = T.reshape(T.matmul(attn, v), (B, d))
            context = T.matmul(context, params["interactor.w_o"])
            if has_agents is not None:
                context = T.mul(context, has_agents)
            hidden = T.add(target, context)
        inner = T.relu(_dense(hidden, params, "ffn", "1"))
        return T.add(hidden, _dense(inner, params, "ffn", "2"))

    def _decode(self, params: Dict[str, Tensor], hidden: Tensor, anchor: np.ndarray) -> Tuple[Tensor, Tensor, Tensor]:
        """
        Returns:
            (log π (B, K), μ (B, K, F, 2), σ (B, K, F, 2))
        """
        cfg = self.config
        B = hidden.shape[0]
        shape = (B, cfg.K, cfg.F, 2)
        logits = T.add(T.matmul(hidden, params["decoder.w_logit"]), params["decoder.b_logit"])
        log_pi = T.log_softmax(logits, axis=-1)
        residual = T.add(T.matmul(hidden, params["decoder.w_mu"]), params["decoder.b_mu"])
        mu = T.add(T.mul(T.reshape(residual, shape), POSITION_SCALE), anchor)
        raw_sigma = T.add(T.matmul(hidden, params["decoder.w_sigma"]), params["decoder.b_sigma"])
        sigma = T.add(T.softplus(T.reshape(raw_sigma, shape)), cfg.sigma_min)
        return log_pi, mu, sigma

    # ------------------------------------------------------------
    # 推理
    # ------------------------------------------------------------

    def predict(
        self,
        scene: Scene,
        keep: Optional[Iterable[int]] = None,
        inference_seed: int = 0,
        stochastic: bool = False
    ) -> MixturePrediction:
        """
        预测目标未来轨迹

        Args:
            scene: 场景
            keep: 可见的周边 agent_id 集合；None 表示全部
            inference_seed: CIB 采样种子（stochastic=True 且启用 CIB 时生效）
            stochastic: CIB 是否采样；默认取后验均值

        Returns:
            MixturePrediction
        """
        return CoalitionEvaluator(self, scene, inference_seed, stochastic).predict(keep)

    # ------------------------------------------------------------
    # 训练用批量前向
    # ------------------------------------------------------------

    def batch_forward(
        self,
        batch: "SceneBatch",
        params: Optional[Dict[str, Tensor]] = None,
        eps: Optional[np.ndarray] = None
    ) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        """
        批量前向，被屏蔽/填充的位置通过注意力偏置排除

        Returns:
            (log π, μ, σ, 逐场景 KL (B,))
        """
        params = params if params is not None else self.parameters
        cfg = self.config
        target = _mlp(Tensor(batch.target_x), params, "target_enc")
        agents = _mlp(Tensor(batch.agent_x), params, "agent_enc")
        kl = Tensor(np.zeros(batch.size))
        if cfg.use_cib:
            agents, kl_agents = cib_forward_batch(agents, target, self.cib_params(params), eps)
            kl = T.reduce_sum(T.mul(kl_agents, batch.mask.astype(np.float64)), axis=-1)
        bias = np.where(batch.mask, 0.0, MASK_BIAS)[:, None, None, :]
        bias = np.broadcast_to(bias, (batch.size, cfg.n_heads, 1, batch.mask.shape[1])).copy()
        has_agents = np.broadcast_to(batch.mask.any(axis=1, keepdims=True), (batch.size, cfg.d_model))
        hidden = self._interact(params, target, agents, bias, has_agents.astype(np.float64))
        log_pi, mu, sigma = self._decode(params, hidden, batch.anchor)
        return log_pi, mu, sigma, kl

    def loss(
        self,
        batch: "SceneBatch",
        params: Optional[Dict[str, Tensor]] = None,
        eps: Optional[np.ndarray] = None
    ) -> Tuple[Tensor, Tensor, Tensor]:
        """
        训练目标 = 平均混合 NLL + β · 平均 (Σ_agents KL)

        Returns:
            (总损失, NLL, KL)
        """
        log_pi, mu, sigma, kl = self.batch_forward(batch, params, eps)
        nll = mixture_nll_loss(log_pi, mu, sigma, batch.gt)
        mean_kl = T.reduce_mean(kl)
        total = T.add(nll, cib_loss_term(mean_kl, self.config.effective_beta)) if self.config.use_cib else nll
        return total, nll, mean_kl


def predict(
    model: PredictorModel,
    scene: Scene,
    keep: Optional[Iterable[int]] = None,
    inference_seed: int = 0,
    stochastic: bool = False
) -> MixturePrediction:
    return model.predict(scene, keep, inference_seed, stochastic)


class CoalitionEvaluator:
    """
    单个场景上的联盟求值器

    目标嵌入与每个智能体的（压缩后）嵌入只计算一次，之后每个联盟只重跑交互器与解码器。
    """

    def __init__(self, model: PredictorModel, scene: Scene, inference_seed: int = 0, stochastic: bool = False):
        self.model = model
        self.scene = scene
        self.params = model.frozen()
        self.target = model.encode_target(scene, self.params)
        self.anchor = _cv_anchor(scene.target.history, model.config.F, model.config.dt)
        embeddings = model.encode_surrounding(scene, None, self.params)
        self.kl_per_agent: Dict[int, float] = {}
        cib = model.cib_params(self.params)
        if cib is not None and embeddings:
            mode = CIBMode.SAMPLE if stochastic else CIBMode.MEAN
            out = cib_forward(embeddings, self.target, cib, mode, seed=inference_seed,
                              agent_ids=scene.agent_ids, scene_id=scene.scene_id)
            embeddings = out.compressed
            self.kl_per_agent = dict(zip(scene.agent_ids, out.kl_per_agent))
        self.embeddings: Dict[int, Tensor] = dict(zip(scene.agent_ids, embeddings))
        self.evaluations = 0

    def predict(self, keep: Optional[Iterable[int]] = None) -> MixturePrediction:
        keep = _check_keep(self.scene, keep)
        self.evaluations += 1
        kept = [self.embeddings[i] for i in self.scene.agent_ids if i in keep]
        d = self.model.config.d_model
        agents = T.reshape(T.concat(kept, axis=0), (1, len(kept), d)) if kept else None
        hidden = self.model._interact(self.params, self.target, agents)
        log_pi, mu, sigma = self.model._decode(self.params, hidden, self.anchor)
        return MixturePrediction.from_log_probs(mu.data[0], sigma.data[0], log_pi.data[0])


# ============================================================
# 损失
# ============================================================


def mixture_nll_loss(log_pi: Tensor, mu: Tensor, sigma: Tensor, gt: np.ndarray) -> Tensor:
    """
    平均混合负对数似然

    NLL = −logsumexp_k (log π_k + Σ_t log N(gt_t; μ_kt, diag σ_kt²))

    Args:
        log_pi: (B, K)
        mu, sigma: (B, K, F, 2)
        gt: (B, F, 2)
    """
    B, K = log_pi.shape
    if gt.shape != (B,) + mu.shape[2:]:
        raise InvalidArgumentError(f"真值形状 {gt.shape} 与预测 {mu.shape} 不匹配")
    target = np.broadcast_to(gt[:, None, :, :], mu.shape).copy()
    per_mode = T.reduce_sum(T.gaussian_log_pdf(target, mu, sigma), axis=(2, 3))
    joint = T.logsumexp(T.add(log_pi, per_mode), axis=-1)
    return T.neg(T.reduce_mean(joint))


# ============================================================
# 批量数据
# ============================================================


@dataclass
class SceneBatch:
    """填充后的批量数组"""

    target_x: np.ndarray
    agent_x: np.ndarray
    mask: np.ndarray
    anchor: np.ndarray
    gt: np.ndarray
    agent_ids: List[Tuple[int, ...]]

    @property
    def size(self) -> int:
        return self.target_x.shape[0]

    @classmethod
    def from_scenes(cls, scenes: Sequence[Scene], config: PredictorConfig) -> "SceneBatch":
        if not scenes:
            raise InvalidArgumentError("批量不能为空")
        B = len(scenes)
        N = max(1, max(s.n_agents for s in scenes))
        n_in = config.H * STATE_DIM
        target_x = np.zeros((B, n_in))
        agent_x = np.zeros((B, N, n_in))
        mask = np.zeros((B, N), dtype=bool)
        anchor = np.zeros((B, 1, config.F, 2))
        gt = np.zeros((B, config.F, 2))
        for b, scene in enumerate(scenes):
            if scene.history_steps != config.H or scene.future_steps != config.F:
                raise InvalidArgumentError(
                    f"scene {scene.scene_id}: (H, F)=({scene.history_steps}, {scene.future_steps}) 与模型不一致"
                )
            target_x[b] = _track_features(scene.target.history)
            anchor[b, 0] = _cv_anchor(scene.target.history, config.F, config.dt)
            gt[b] = scene.gt_future
            for j, agent in enumerate(scene.surrounding):
                agent_x[b, j] = _track_features(agent.history)
                mask[b, j] = True
        anchor = np.broadcast_to(anchor, (B, config.K, config.F, 2)).copy()
        return cls(target_x, agent_x, mask, anchor, gt, [s.agent_ids for s in scenes])


# ============================================================
# 训练
# ============================================================


@dataclass
class EpochStats:
    epoch: int
    train_nll: float
    train_kl: float
    val_nll: Optional[float] = None


@dataclass
class TrainingReport:
    """逐 epoch 训练统计"""

    epochs: List[EpochStats] = field(default_factory=list)
    steps: int = 0

    @property
    def final_val_nll(self) -> Optional[float]:
        return self.epochs[-1].val_nll if self.epochs else None

    @property
    def final_train_kl(self) -> Optional[float]:
        return self.epochs[-1].train_kl if self.epochs else None


class Adam:
    """带全局梯度范数裁剪的 Adam"""

    def __init__(self, parameters: Dict[str, Tensor], config: OptimizerConfig):
        self.parameters = parameters
        self.config = config
        self.m = {n: np.zeros_like(p.data) for n, p in parameters.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in parameters.items()}
        self.t = 0

    def step(self, grads: Dict[str, np.ndarray]) -> float:
        cfg = self.config
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        scale = cfg.clip_norm / norm if norm > cfg.clip_norm else 1.0
        self.t += 1
        for name, p in self.parameters.items():
            g = grads.get(name)
            if g is None:
                continue
            g = g * scale
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * g * g
            m_hat = self.m[name] / (1.0 - cfg.beta1 ** self.t)
            v_hat = self.v[name] / (1.0 - cfg.beta2 ** self.t)
            p.data -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        return norm


def evaluate_nll(model: PredictorModel, scenes: Sequence[Scene], batch_size: int = 256) -> float:
    """数据集平均混合 NLL（CIB 取后验均值）"""
    total = 0.0
    params = model.frozen()
    for start in range(0, len(scenes), batch_size):
        chunk = scenes[start:start + batch_size]
        _, nll, _ = model.loss(SceneBatch.from_scenes(chunk, model.config), params)
        total += nll.item() * len(chunk)
    return total / len(scenes)


def train(
    model: PredictorModel,
    train_scenes: Sequence[Scene],
    opt_config: Optional[OptimizerConfig] = None,
    val_scenes: Optional[Sequence[Scene]] = None
) -> TrainingReport:
    """
    小批量 Adam 训练

    Args:
        model: 预测器（原地更新）
        train_scenes: 训练集（非空）
        opt_config: 优化器配置
        val_scenes: 可选的验证集，每个 epoch 结束时计算 NLL

    Returns:
        TrainingReport；给定 (config.seed, 数据顺序) 完全确定

    Raises:
        TrainingError: 损失或梯度出现 NaN/Inf
    """
    opt_config = (opt_config or OptimizerConfig()).validate()
    if not train_scenes:
        raise InvalidArgumentError("训练集不能为空")
    cfg = model.config
    report = TrainingReport()
    optimizer = Adam(model.parameters, opt_config)
    names = {id(p): n for n, p in model.parameters.items()}
    n = len(train_scenes)
    logger.info(f"正在训练模型 (use_cib={cfg.use_cib}, beta={cfg.effective_beta}, seed={cfg.seed}, "
                f"params={model.parameter_count()}, scenes={n}, epochs={opt_config.epochs})...")

    for epoch in range(opt_config.epochs):
        order = _rng(cfg.seed, epoch).permutation(n)
        nll_sum, kl_sum = 0.0, 0.0
        for batch_index, start in enumerate(range(0, n, opt_config.batch_size)):
            chunk = [train_scenes[i] for i in order[start:start + opt_config.batch_size]]
            batch = SceneBatch.from_scenes(chunk, cfg)
            eps = None
            if cfg.use_cib:
                eps = _rng(cfg.seed, epoch, batch_index, 1).standard_normal(
                    batch.mask.shape + (cfg.latent_dim,))
            total, nll, kl = model.loss(batch, eps=eps)
            if not np.isfinite(total.item()):
                raise TrainingError(report.steps, f"损失为 {total.item()}")
            grads = {names[id(p)]: g for p, g in T.backward(total).items() if id(p) in names}
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(report.steps, "梯度出现非有限值")
            optimizer.step(grads)
            report.steps += 1
            nll_sum += nll.item() * len(chunk)
            kl_sum += kl.item() * len(chunk)
        stats = EpochStats(epoch=epoch, train_nll=nll_sum / n, train_kl=kl_sum / n)
        if val_scenes:
            stats.val_nll = evaluate_nll(model, val_scenes)
        report.epochs.append(stats)
        logger.info(f"epoch {epoch}: train_nll={stats.train_nll:.4f} train_kl={stats.train_kl:.4f}"
                    + (f" val_nll={stats.val_nll:.4f}" if stats.val_nll is not None else ""))
    return report


# ============================================================
# 检查点
# ============================================================


def save_checkpoint(model: PredictorModel, path: Path) -> Path:
    """
    写出 JSON 检查点

    格式: {"format", "version", "config", "parameters": {name: {"shape", "data"}}}；
    浮点数以最短往返表示写出，读回逐位一致。
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "parameters": {
            name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
            for name, p in model.parameters.items()
        },
    }
    return _write_text(path, _canonical_json(doc) + "\n")


def load_checkpoint(path: Path, expected_config: Optional[PredictorConfig] = None) -> PredictorModel:
    """
    读取 JSON 检查点

    Args:
        path: 检查点路径
        expected_config: 若给出，配置必须完全一致

    Returns:
        PredictorModel

    Raises:
        CheckpointError: 文件损坏（给出出错偏移）、格式/版本/配置/形状不匹配；不会部分加载
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"无法读取检查点 {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"检查点 {path} 已损坏: 偏移 {exc.pos} 处 {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} 不是 trajshap 检查点")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"检查点版本 {doc.get('version')} 不受支持（需要 {CHECKPOINT_VERSION}）")
    try:
        config = PredictorConfig(**doc["config"]).validate()
    except (TypeError, KeyError, ConfigError) as exc:
        raise CheckpointError(f"检查点配置无效: {exc}") from exc
    if expected_config is not None and asdict(expected_config) != asdict(config):
        diff = sorted(k for k, v in asdict(expected_config).items() if asdict(config).get(k) != v)
        raise CheckpointError(f"检查点配置与期望不一致: {', '.join(diff)}")

    stored = doc.get("parameters", {})
    expected = parameter_shapes(config)
    if sorted(stored) != sorted(n for n, _ in expected):
        raise CheckpointError("检查点参数名与配置不一致")
    arrays = {}
    for name, shape in expected:
        entry = stored[name]
        data = np.asarray(entry.get("data", []), dtype=np.float64)
        if tuple(entry.get("shape", ())) != shape or data.size != int(np.prod(shape)):
            raise CheckpointError(f"参数 {name} 形状不匹配: 期望 {shape}，实际 {entry.get('shape')}")
        arrays[name] = data.reshape(shape)
    params = {name: Tensor(arrays[name], requires_grad=True, name=name) for name, _ in expected}
    return PredictorModel(config, params)
