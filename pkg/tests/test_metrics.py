import numpy as np
import pytest
from scipy.stats import norm

from trajshap.core.metrics import (
    MetricKind, MetricName, SceneValueFunction, evaluate, mixture_nll, top_modes, value_function
)
from trajshap.core.predictor import MixturePrediction
from trajshap.core.scene import mask_scene
from trajshap.errors import InvalidArgumentError

from .conftest import make_scene

GT = np.array([[1.0, 0.0], [2.0, 1.0]])


def _prediction(probs=(0.3, 0.7)):
    modes = np.array([[[1.0, 0.0], [2.0, 0.0]],
                      [[1.0, 1.0], [2.0, 3.0]]])
    sigmas = np.array([[[0.5, 0.5], [1.0, 1.0]],
                       [[0.8, 0.8], [1.5, 1.5]]])
    return MixturePrediction.from_log_probs(modes, sigmas, np.log(np.asarray(probs)))


def test_displacement_metrics_over_all_modes():
    pred = _prediction()
    assert evaluate(pred, GT, MetricKind.min_ade()).value == pytest.approx(0.5)
    assert evaluate(pred, GT, MetricKind.min_fde()).value == pytest.approx(1.0)


def test_top_k_uses_most_probable_modes():
    pred = _prediction()
    assert evaluate(pred, GT, MetricKind.min_ade(1)).value == pytest.approx(1.5)
    assert evaluate(pred, GT, MetricKind.min_fde(1)).value == pytest.approx(2.0)


def test_miss_rate_counts_threshold_as_hit():
    pred = _prediction()
    assert evaluate(pred, GT, MetricKind.miss_rate(threshold=1.0)).value == 0.0
    assert evaluate(pred, GT, MetricKind.miss_rate(1, threshold=1.0)).value == 1.0
    assert evaluate(pred, GT, MetricKind.miss_rate(1, threshold=2.0)).value == 0.0


def test_top_modes_breaks_ties_by_index():
    assert top_modes(_prediction((0.5, 0.5)), 1).tolist() == [0]
    assert top_modes(_prediction(), None).tolist() == [1, 0]


def test_k_larger_than_modes_rejected():
    with pytest.raises(InvalidArgumentError):
        evaluate(_prediction(), GT, MetricKind.min_ade(3))


def test_ground_truth_length_checked():
    with pytest.raises(InvalidArgumentError):
        evaluate(_prediction(), np.zeros((3, 2)), MetricKind.min_fde())


def test_nll_matches_density_oracle():
    pred = _prediction()
    dens = norm.pdf(GT[None], pred.modes, pred.sigmas).prod(axis=(1, 2))
    oracle = -np.log(np.sum(pred.mode_probs * dens))
    assert mixture_nll(pred, GT) == pytest.approx(oracle, abs=1e-12)
    assert evaluate(pred, GT, MetricKind.nll()).value == mixture_nll(pred, GT)


def test_metric_kind_validation_and_labels():
    with pytest.raises(InvalidArgumentError):
        MetricKind.miss_rate(threshold=-1.0)
    with pytest.raises(InvalidArgumentError):
        MetricKind.min_ade(0)
    with pytest.raises(InvalidArgumentError):
        MetricKind.parse("brier")
    kind = MetricKind.parse("MissRate@6:2.0")
    assert kind == MetricKind.miss_rate(6, 2.0)
    assert kind.label == "missrate@6:2.0"
    assert MetricKind.parse("minade@6").name == MetricName.MIN_ADE
    assert str(MetricKind.nll()) == "nll"


def test_value_function_matches_physical_removal(model):
    scene = make_scene(4)
    for kind in (MetricKind.nll(), MetricKind.min_ade(), MetricKind.miss_rate()):
        expected = evaluate(model.predict(mask_scene(scene, {1, 3})), scene.gt_future, kind).value
        assert value_function(model, scene, {3, 1}, kind) == expected
    with pytest.raises(InvalidArgumentError):
        value_function(model, scene, {9}, MetricKind.nll())


def test_scene_value_function_caches(model):
    scene = make_scene(3)
    v = SceneValueFunction(model, scene, MetricKind.nll())
    first = v({1, 2})
    assert v([2, 1]) == first
    assert v.evaluations == 1
    uncached = SceneValueFunction(model, scene, MetricKind.nll(), use_cache=False)
    assert uncached({1, 2}) == first and uncached({1, 2}) == first
    assert uncached.evaluations == 2
