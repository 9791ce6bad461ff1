"""测试共用的场景与模型"""

import numpy as np
import pytest

from trajshap.core.predictor import OptimizerConfig, PredictorConfig, PredictorModel, train
from trajshap.core.scene import (
    AgentRole, AgentTrack, CausalLabel, GeneratorConfig, GeneratorKind, Scene, Split, generate_dataset
)

H, F = 10, 12


# 小实验清单：12 个训练场景、6 个验证场景、每个场景至多 3 个周边智能体
TINY_MANIFEST = """\
# 测试用的小实验
format_version=1
gen.max_agents=3
gen.n_leader_follower=4
gen.n_independent=2
gen.n_spurious=2
gen.n_mixed=4
gen.max_extra_agents=1
gen.val_fraction=0.5
model.d_model=8
model.K=3
model.n_heads=2
opt.epochs=1
opt.batch_size=8
cib.enabled=true
cib.beta=0.5
seeds.train=0,1
seeds.inference=0,1
metrics.names=nll,minade@3,missrate
attr.permutations=10
attr.dummy_scenes=2
robust.sigmas=0.3
"""


def make_track(agent_id, role=AgentRole.SURROUNDING, x0=0.0, y0=0.0, vx=10.0, vy=0.0,
               label=CausalLabel.NON_CAUSAL, dt=0.5, with_future=True):
    """匀速直线轨迹；目标在最后历史时刻位于 (x0, y0)"""
    t = np.arange(-(H - 1), F + 1, dtype=np.float64) * dt
    states = np.zeros((H + F, 7))
    states[:, 0] = x0 + vx * t
    states[:, 1] = y0 + vy * t
    states[:, 2] = vx
    states[:, 3] = vy
    states[:, 4] = 1.9
    states[:, 5] = 4.5
    states[:, 6] = np.arctan2(vy, vx) if (vx or vy) else 0.0
    return AgentTrack(agent_id=agent_id, role=role, history=states[:H],
                      future=states[H:] if with_future else None, causal_label=label)


def make_scene(n_agents, scene_id=0, labels=None):
    """一个目标 + n_agents 个位置各不相同的周边智能体"""
    target = make_track(0, AgentRole.TARGET, label=CausalLabel.UNLABELED)
    surrounding = []
    for i in range(n_agents):
        label = labels[i] if labels is not None else (CausalLabel.CAUSAL if i == 0 else CausalLabel.NON_CAUSAL)
        surrounding.append(make_track(
            i + 1, x0=8.0 + 6.0 * i, y0=(-1.0) ** i * 3.5 * (i % 3), vx=9.0 + 0.5 * i, label=label,
        ))
    return Scene(scene_id=scene_id, target=target, surrounding=tuple(surrounding),
                 generator_kind=GeneratorKind.MIXED, rng_seed=0)


@pytest.fixture(scope="session")
def gen_config():
    return GeneratorConfig(n_leader_follower=8, n_independent=4, n_spurious=4, n_mixed=8, max_agents=5,
                           max_extra_agents=2)


@pytest.fixture(scope="session")
def scenes(gen_config):
    return generate_dataset(gen_config, seed=3)


@pytest.fixture(scope="session")
def val_scenes(gen_config):
    cfg = GeneratorConfig(**{**gen_config.__dict__, "split": Split.VALIDATION})
    return generate_dataset(cfg, seed=3)


@pytest.fixture(scope="session")
def small_config():
    return PredictorConfig(d_model=8, K=3, n_heads=2, H=H, F=F, seed=0)


@pytest.fixture(scope="session")
def cib_config():
    return PredictorConfig(d_model=8, K=3, n_heads=2, H=H, F=F, seed=0, use_cib=True, beta=0.1)


@pytest.fixture
def model(small_config):
    return PredictorModel(small_config)


@pytest.fixture
def cib_model(cib_config):
    return PredictorModel(cib_config)


@pytest.fixture(scope="session")
def trained_model(small_config, scenes):
    model = PredictorModel(small_config)
    train(model, scenes, OptimizerConfig(lr=5e-3, epochs=3, batch_size=8))
    return model


@pytest.fixture
def agent_free_model(small_config):
    """交互器输出投影为 0，预测与周边智能体无关"""
    model = PredictorModel(small_config)
    model.parameters["interactor.w_o"].data[:] = 0.0
    return model
