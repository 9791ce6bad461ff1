import dataclasses
import json

import numpy as np
import pytest
from scipy.stats import norm

from trajshap.core import predictor as predictor_module
from trajshap.core import tensor as T
from trajshap.core.cib import CIBParams
from trajshap.core.predictor import (
    OptimizerConfig, PredictorConfig, PredictorModel, SceneBatch, evaluate_nll, load_checkpoint,
    mixture_nll_loss, predict, save_checkpoint, train
)
from trajshap.core.metrics import mixture_nll
from trajshap.core.scene import mask_scene
from trajshap.core.tensor import Tensor, gradient_check
from trajshap.errors import CheckpointError, ConfigError, InvalidArgumentError, TrainingError

from .conftest import make_scene


def test_prediction_shapes(model, small_config):
    pred = model.predict(make_scene(3))
    assert pred.modes.shape == (small_config.K, small_config.F, 2)
    assert pred.sigmas.shape == pred.modes.shape
    assert pred.mode_probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(pred.sigmas >= small_config.sigma_min)


@pytest.mark.parametrize("use_cib", [False, True])
def test_masking_interface_equals_physical_removal(small_config, use_cib):
    model = PredictorModel(dataclasses.replace(small_config, use_cib=use_cib, beta=0.5))
    scene = make_scene(4)
    for keep in ({1, 3}, {2}, set(), {1, 2, 3, 4}):
        assert model.predict(scene, keep) == model.predict(mask_scene(scene, keep))
    assert model.predict(scene) == model.predict(scene, scene.agent_ids)
    assert predict(model, scene, {2}) == model.predict(scene, {2})


def test_unknown_agent_rejected(model):
    with pytest.raises(InvalidArgumentError):
        model.predict(make_scene(2), {7})


def test_empty_coalition_depends_only_on_target(model):
    assert model.predict(make_scene(4), set()) == model.predict(make_scene(1), set())


def test_agent_order_does_not_matter(model):
    scene = make_scene(4)
    shuffled = dataclasses.replace(scene, surrounding=tuple(reversed(scene.surrounding)))
    a, b = model.predict(scene), model.predict(shuffled)
    assert np.allclose(a.modes, b.modes, atol=1e-12)
    assert np.allclose(a.log_probs, b.log_probs, atol=1e-12)


def test_history_length_mismatch(small_config):
    model = PredictorModel(dataclasses.replace(small_config, H=8))
    with pytest.raises(InvalidArgumentError):
        model.predict(make_scene(1))


def test_invalid_config():
    with pytest.raises(ConfigError):
        PredictorConfig(d_model=10, n_heads=4).validate()
    with pytest.raises(ConfigError):
        PredictorConfig(K=0).validate()


def test_stochastic_inference_is_seeded(cib_model):
    scene = make_scene(3)
    assert cib_model.predict(scene, inference_seed=1) == cib_model.predict(scene, inference_seed=2)
    s1 = cib_model.predict(scene, inference_seed=1, stochastic=True)
    assert s1 == cib_model.predict(scene, inference_seed=1, stochastic=True)
    assert s1 != cib_model.predict(scene, inference_seed=2, stochastic=True)


@pytest.mark.parametrize("use_cib", [False, True])
def test_padded_batch_matches_single_scene_predictions(small_config, use_cib):
    model = PredictorModel(dataclasses.replace(small_config, use_cib=use_cib, beta=0.5))
    scenes = [make_scene(1, scene_id=0), make_scene(4, scene_id=1), make_scene(0, scene_id=2)]
    batch = SceneBatch.from_scenes(scenes, model.config)
    _, nll, _ = model.loss(batch, model.frozen())
    expected = np.mean([mixture_nll(model.predict(s), s.gt_future) for s in scenes])
    assert nll.item() == pytest.approx(expected, abs=1e-9)


def test_mixture_nll_matches_probability_space_oracle():
    rng = np.random.default_rng(4)
    B, K, F = 2, 3, 4
    logits = rng.standard_normal((B, K))
    mu = rng.standard_normal((B, K, F, 2))
    sigma = rng.uniform(0.5, 1.5, size=(B, K, F, 2))
    gt = rng.standard_normal((B, F, 2))
    log_pi = T.log_softmax(Tensor(logits))
    value = mixture_nll_loss(log_pi, Tensor(mu), Tensor(sigma), gt).item()

    pi = np.exp(log_pi.data)
    dens = norm.pdf(gt[:, None], mu, sigma).prod(axis=(2, 3))
    oracle = -np.mean(np.log((pi * dens).sum(axis=1)))
    assert value == pytest.approx(oracle, abs=1e-8)


@pytest.mark.parametrize("use_cib", [False, True])
def test_loss_gradients(small_config, use_cib):
    model = PredictorModel(dataclasses.replace(small_config, use_cib=use_cib, beta=0.5))
    batch = SceneBatch.from_scenes([make_scene(2, scene_id=0), make_scene(3, scene_id=1)], model.config)
    eps = np.random.default_rng(0).standard_normal(batch.mask.shape + (model.config.latent_dim,)) if use_cib else None
    names = ["target_enc.w1", "agent_enc.w2", "interactor.w_q", "decoder.w_mu", "decoder.b_sigma"]
    if use_cib:
        names += ["cib.post.w1", "cib.prior.w2"]
    params = [model.parameters[n] for n in names]
    # ReLU 拐点附近 1e-4 的步长会跨过折点
    assert gradient_check(lambda: model.loss(batch, eps=eps)[0], params, eps=1e-6, max_entries=6) < 1e-5


def test_loss_adds_cib_term(monkeypatch, small_config):
    calls = []
    real = predictor_module.cib_loss_term

    def spy(kl, beta):
        calls.append(beta)
        return real(kl, beta)

    monkeypatch.setattr(predictor_module, "cib_loss_term", spy)
    batch_scenes = [make_scene(2, scene_id=0), make_scene(3, scene_id=1)]

    model = PredictorModel(dataclasses.replace(small_config, use_cib=True, beta=0.5))
    total, nll, kl = model.loss(SceneBatch.from_scenes(batch_scenes, model.config))
    assert calls == [0.5]
    assert total.item() == nll.item() + kl.item() * 0.5

    baseline = PredictorModel(small_config)
    total, nll, _ = baseline.loss(SceneBatch.from_scenes(batch_scenes, baseline.config))
    assert calls == [0.5] and total.item() == nll.item()


def test_cib_parameters_use_cib_initializer(monkeypatch, small_config):
    calls = []
    real = CIBParams.initialize.__func__

    def spy(cls, rng, d_model, d_z):
        calls.append((d_model, d_z))
        return real(cls, rng, d_model, d_z)

    monkeypatch.setattr(CIBParams, "initialize", classmethod(spy))
    cfg = dataclasses.replace(small_config, use_cib=True, beta=0.5)
    model = PredictorModel(cfg)
    assert calls == [(cfg.d_model, cfg.latent_dim)]
    assert np.all(model.parameters["cib.post.b2"].data[cfg.latent_dim:] == -1.0)

    # CIB 块之前的参数与基线同种子一致
    baseline = PredictorModel(small_config)
    assert np.array_equal(baseline.parameters["agent_enc.w2"].data, model.parameters["agent_enc.w2"].data)
    assert model.parameter_count() > baseline.parameter_count()


def test_training_is_deterministic_and_reduces_nll(small_config, scenes):
    opt = OptimizerConfig(lr=1e-2, epochs=4, batch_size=8)
    a, b = PredictorModel(small_config), PredictorModel(small_config)
    before = evaluate_nll(a, scenes)
    report = train(a, scenes, opt)
    train(b, scenes, opt)
    assert np.array_equal(a.parameter_vector(), b.parameter_vector())
    assert a.checksum() == b.checksum()
    assert len(report.epochs) == 4 and report.steps == 4 * 3
    assert evaluate_nll(a, scenes) < before


def test_training_records_validation_nll(small_config, scenes, val_scenes):
    model = PredictorModel(dataclasses.replace(small_config, use_cib=True, beta=0.1))
    report = train(model, scenes, OptimizerConfig(epochs=1, batch_size=16), val_scenes)
    assert report.final_val_nll is not None and np.isfinite(report.final_val_nll)
    assert report.final_train_kl >= 0.0


def test_divergence_raises_training_error(small_config, scenes):
    model = PredictorModel(small_config)
    model.parameters["decoder.b_mu"].data[:] = np.nan
    with np.errstate(invalid="ignore"):
        with pytest.raises(TrainingError) as err:
            train(model, scenes, OptimizerConfig(epochs=1))
    assert err.value.step == 0


def test_checkpoint_round_trip(tmp_path, cib_model):
    path = save_checkpoint(cib_model, tmp_path / "model.json")
    loaded = load_checkpoint(path, expected_config=cib_model.config)
    assert loaded.checksum() == cib_model.checksum()
    scene = make_scene(3)
    assert loaded.predict(scene, {1, 3}) == cib_model.predict(scene, {1, 3})


def test_checkpoint_errors(tmp_path, model, small_config):
    path = save_checkpoint(model, tmp_path / "model.json")
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_config=dataclasses.replace(small_config, K=4))

    text = path.read_text(encoding="utf-8")
    (tmp_path / "cut.json").write_text(text[: len(text) // 2], encoding="utf-8")
    with pytest.raises(CheckpointError, match="偏移"):
        load_checkpoint(tmp_path / "cut.json")

    doc = json.loads(text)
    doc["version"] = 99
    (tmp_path / "v99.json").write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "v99.json")
