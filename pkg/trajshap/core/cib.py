"""
条件信息瓶颈
============

以目标嵌入为条件，对周边智能体嵌入做随机压缩，并给出 β 加权的变分 KL 惩罚。

后验 q(t | x₁, x₂) 与条件先验 r(t | x₂) 都是对角高斯；KL 使用闭式解。
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import InvalidArgumentError, NumericError
from ..utils import _rng
from . import tensor as T
from .tensor import Tensor


class CIBMode(str, Enum):
    MEAN = "mean"
    SAMPLE = "sample"


# 参数名（按初始化顺序）
CIB_PARAMETER_NAMES = [
    "cib.post.w1", "cib.post.b1", "cib.post.w2", "cib.post.b2",
    "cib.prior.w1", "cib.prior.b1", "cib.prior.w2", "cib.prior.b2",
    "cib.readout.w", "cib.readout.b",
]


def cib_parameter_shapes(d_model: int, d_z: int) -> List[Tuple[str, Tuple[int, ...]]]:
    """CIB 参数的名称与形状"""
    return [
        ("cib.post.w1", (2 * d_model, d_model)),
        ("cib.post.b1", (d_model,)),
        ("cib.post.w2", (d_model, 2 * d_z)),
        ("cib.post.b2", (2 * d_z,)),
        ("cib.prior.w1", (d_model, d_model)),
        ("cib.prior.b1", (d_model,)),
        ("cib.prior.w2", (d_model, 2 * d_z)),
        ("cib.prior.b2", (2 * d_z,)),
        ("cib.readout.w", (d_z, d_model)),
        ("cib.readout.b", (d_model,)),
    ]


@dataclass
class CIBParams:
    """
    CIB 的三组参数

    posterior_net: (x₁ᵢ, x₂) → (μ_q, log σ_q)
    prior_net: x₂ → (μ_r, log σ_r)
    readout: t → d_model
    """

    tensors: Dict[str, Tensor]

    def __post_init__(self):
        missing = [n for n in CIB_PARAMETER_NAMES if n not in self.tensors]
        if missing:
            raise InvalidArgumentError(f"CIB 参数缺失: {missing}")
        if self.d_z > self.d_model:
            raise InvalidArgumentError(f"d_z={self.d_z} 不能大于 d_model={self.d_model}")

    @property
    def d_model(self) -> int:
        return self.tensors["cib.readout.w"].shape[1]

    @property
    def d_z(self) -> int:
        return self.tensors["cib.readout.w"].shape[0]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @classmethod
    def initialize(cls, rng: np.random.Generator, d_model: int, d_z: int) -> "CIBParams":
        tensors = {}
        for name, shape in cib_parameter_shapes(d_model, d_z):
            if len(shape) == 2:
                data = rng.standard_normal(shape) / np.sqrt(shape[0])
            else:
                data = np.zeros(shape)
            if name == "cib.post.b2":
                # 后验初始偏窄
                data[d_z:] = -1.0
            tensors[name] = Tensor(data, requires_grad=True, name=name)
        return cls(tensors)


@dataclass
class CIBOutput:
    """
    CIB 前向结果

    kl_terms 保留可微的逐智能体 KL，供训练器求梯度。
    """

    compressed: List[Tensor]
    kl_per_agent: List[float]
    total_kl: float
    kl_terms: List[Tensor]

    @property
    def total_kl_tensor(self) -> Tensor:
        if not self.kl_terms:
            return Tensor(0.0)
        total = self.kl_terms[0]
        for term in self.kl_terms[1:]:
            total = total + term
        return total


def _dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(x, w), b)


def gaussian_kl(mu_q, log_sigma_q, mu_r, log_sigma_r) -> Tensor:
    """
    对角高斯 KL(q‖r)，沿最后一维求和

    KL = Σ [log σ_r − log σ_q + (σ_q² + (μ_q − μ_r)²) / (2σ_r²) − ½]
    """
    mu_q, log_sigma_q = T._as_tensor(mu_q), T._as_tensor(log_sigma_q)
    mu_r, log_sigma_r = T._as_tensor(mu_r), T._as_tensor(log_sigma_r)
    ratio = T.exp(T.mul(T.sub(log_sigma_q, log_sigma_r), 2.0))
    diff = T.square(T.sub(mu_q, mu_r))
    scaled = T.mul(diff, T.exp(T.mul(log_sigma_r, -2.0)))
    per_dim = T.sub(T.add(T.sub(log_sigma_r, log_sigma_q), T.mul(T.add(ratio, scaled), 0.5)), 0.5)
    return T.reduce_sum(per_dim, axis=-1)


def posterior(params: CIBParams, agents: Tensor, target: Tensor) -> Tuple[Tensor, Tensor]:
    """
    后验网络

    Args:
        agents: (..., d_model) 智能体嵌入
        target: 与 agents 同形状的目标嵌入

    Returns:
        (μ_q, log σ_q)，形状 (..., d_z)
    """
    x = T.concat([agents, target], axis=-1)
    hidden = T.tanh(_dense(x, params["cib.post.w1"], params["cib.post.b1"]))
    out = _dense(hidden, params["cib.post.w2"], params["cib.post.b2"])
    d_z = params.d_z
    return out[..., :d_z], out[..., d_z:]


def prior(params: CIBParams, target: Tensor) -> Tuple[Tensor, Tensor]:
    """条件先验网络，返回 (μ_r, log σ_r)"""
    hidden = T.tanh(_dense(target, params["cib.prior.w1"], params["cib.prior.b1"]))
    out = _dense(hidden, params["cib.prior.w2"], params["cib.prior.b2"])
    d_z = params.d_z
    return out[..., :d_z], out[..., d_z:]


def readout(params: CIBParams, latent: Tensor) -> Tensor:
    return T.tanh(_dense(latent, params["cib.readout.w"], params["cib.readout.b"]))


def agent_noise(seed: int, agent_id: int, d_z: int, scene_id: Optional[int] = None) -> np.ndarray:
    """按 (seed, [scene_id,] agent_id) 派生的标准正态噪声"""
    keys = (seed, agent_id) if scene_id is None else (seed, scene_id, agent_id)
    return _rng(*keys).standard_normal(d_z)


def cib_forward(
    agents: Sequence[Tensor],
    target: Tensor,
    params: CIBParams,
    mode: CIBMode = CIBMode.MEAN,
    seed: int = 0,
    agent_ids: Optional[Sequence[int]] = None,
    scene_id: Optional[int] = None
) -> CIBOutput:
    """
    对每个智能体嵌入分别做条件压缩

    Args:
        agents: 智能体嵌入列表，每个形状 (1, d_model) 或 (d_model,)
        target: 目标嵌入，形状同单个智能体嵌入
        params: CIB 参数
        mode: MEAN 取 t = μ_q；SAMPLE 用重参数化采样
        seed: SAMPLE 模式的噪声种子
        agent_ids: 噪声按 agent_id 派生；缺省时用列表下标
        scene_id: 可选，参与噪声派生

    Returns:
        CIBOutput；空列表返回空输出且 total_kl = 0

    Raises:
        NumericError: 某个智能体的中间量出现非有限值
    """
    mode = CIBMode(mode)
    if agent_ids is None:
        agent_ids = list(range(len(agents)))
    if len(agent_ids) != len(agents):
        raise InvalidArgumentError("agent_ids 与 agents 长度不一致")

    mu_r, log_sigma_r = prior(params, target)
    compressed, kls, terms = [], [], []
    for index, (agent, agent_id) in enumerate(zip(agents, agent_ids)):
        mu_q, log_sigma_q = posterior(params, agent, target)
        if not (np.all(np.isfinite(mu_q.data)) and np.all(np.isfinite(log_sigma_q.data))):
            raise NumericError(f"CIB 后验在第 {index} 个智能体 (agent_id={agent_id}) 处出现非有限值")
        if mode == CIBMode.SAMPLE:
            eps = agent_noise(seed, agent_id, params.d_z, scene_id).reshape(mu_q.shape)
            latent = T.add(mu_q, T.mul(T.exp(log_sigma_q), eps))
        else:
            latent = mu_q
        kl = T.reduce_sum(gaussian_kl(mu_q, log_sigma_q, mu_r, log_sigma_r))
        if not np.isfinite(kl.item()):
            raise NumericError(f"CIB KL 在第 {index} 个智能体 (agent_id={agent_id}) 处出现非有限值")
        compressed.append(readout(params, latent))
        terms.append(kl)
        kls.append(kl.item())
    return CIBOutput(compressed=compressed, kl_per_agent=kls, total_kl=float(sum(kls)), kl_terms=terms)


def cib_forward_batch(
    agents: Tensor,
    target: Tensor,
    params: CIBParams,
    eps: Optional[np.ndarray] = None
) -> Tuple[Tensor, Tensor]:
    """
    训练用的批量前向

    Args:
        agents: (B, N, d_model)
        target: (B, d_model)
        eps: (B, N, d_z) 噪声；None 表示取均值

    Returns:
        (压缩后的嵌入 (B, N, d_model), 逐智能体 KL (B, N))
    """
    B, N, d = agents.shape
    target_rows = T.expand(T.reshape(target, (B, 1, d)), axis=1, n=N)
    mu_q, log_sigma_q = posterior(params, agents, target_rows)
    mu_r, log_sigma_r = prior(params, target_rows)
    latent = mu_q if eps is None else T.add(mu_q, T.mul(T.exp(log_sigma_q), eps))
    return readout(params, latent), gaussian_kl(mu_q, log_sigma_q, mu_r, log_sigma_r)


def cib_loss_term(output, beta: float) -> Tensor:
    """
    β·total_kl，由训练器加到预测 NLL 上

    Args:
        output: CIBOutput 或可微的 KL 标量张量
        beta: 非负权重

    Returns:
        可微标量
    """
    if beta < 0:
        raise InvalidArgumentError(f"beta 必须 ≥ 0，当前 {beta}")
    kl = output.total_kl_tensor if isinstance(output, CIBOutput) else T._as_tensor(output)
    return T.mul(kl, float(beta))
