import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from trajshap.core.metrics import MetricKind, MetricName, value_function
from trajshap.core.predictor import OptimizerConfig, PredictorConfig, PredictorModel, train
from trajshap.core.scene import CausalLabel, GeneratorConfig, Split, generate_dataset
from trajshap.harness import Pipeline, load_manifest
from trajshap.harness.acceptance import (
    FAIL, PASS, SKIPPED, check_agreement_structure, check_cib_gap_shrinkage, check_gap_signs,
    check_insertion_u_shape, check_robustness_orderings, evaluate_acceptance, required_seeds
)
from trajshap.utils import _read_csv

from .conftest import F, H

SMOKE_MANIFEST = Path(__file__).resolve().parent.parent / "manifests" / "smoke.env"


def _gap(variant, metric, super_all, no_all=1.0):
    return {"variant": variant, "metric": metric, "delta_super_all": str(super_all), "delta_no_all": str(no_all)}


def _curve(variant, split, values_per_seed):
    rows = []
    for values in values_per_seed:
        for i, value in enumerate(values):
            rows.append({"variant": variant, "direction": "insertion", "split": split,
                         "fraction": str(i / (len(values) - 1)), "value": str(value)})
    return rows


def _robust(variant, perturbation, abs_delta, percent, sigma="0.2"):
    sigma = sigma if perturbation == "gaussian_noise" else ""
    return {"variant": variant, "perturbation": perturbation, "sigma": sigma,
            "abs_delta": str(abs_delta), "percent_abs_delta": str(percent)}


def _stats(extreme_mass, p_value=0.5, total=10):
    return {"N": 3, "total": total, "extreme_mass": extreme_mass, "chi2": 1.0, "dof": 3, "p_value": p_value,
            "full_agreement_mean_phi": 0.0}


# ============================================================
# 单条检查
# ============================================================


@pytest.mark.parametrize("n, need", [(1, 1), (2, 2), (5, 4), (10, 8)])
def test_required_seeds(n, need):
    assert required_seeds(n) == need


def test_gap_signs():
    rows = [_gap("baseline", "nll", d, 2.0) for d in (-0.5, -0.2, -0.1, -0.3, 0.1)]
    result = check_gap_signs(rows)
    assert result["status"] == PASS
    assert (result["seeds_super_better"], result["required_seeds"], result["n_seeds"]) == (4, 4, 5)

    rows[1] = _gap("baseline", "nll", 0.2, 2.0)
    assert check_gap_signs(rows)["status"] == FAIL
    assert check_gap_signs([_gap("baseline", "nll", -0.5, -1.0)])["status"] == FAIL
    assert check_gap_signs([_gap("cib", "nll", -0.5)])["status"] == SKIPPED


def test_cib_gap_shrinkage():
    rows = [_gap("baseline", "minade@6", -0.4), _gap("baseline", "minade@6", -0.2),
            _gap("cib", "minade@6", -0.1), _gap("cib", "minade@6", 0.05)]
    result = check_cib_gap_shrinkage(rows, "minade@6")
    assert result["status"] == PASS
    assert result["baseline_abs_gap"] == pytest.approx(0.3) and result["cib_abs_gap"] == pytest.approx(0.025)

    rows = [_gap("baseline", "minade@6", 0.1), _gap("cib", "minade@6", -0.3)]
    assert check_cib_gap_shrinkage(rows, "minade@6")["status"] == FAIL
    assert check_cib_gap_shrinkage(rows, None)["status"] == SKIPPED
    assert check_cib_gap_shrinkage(rows[:1], "minade@6")["status"] == SKIPPED


def test_insertion_u_shape():
    val = _curve("baseline", "validation", [[5.0, 3.0, 4.0], [5.2, 3.1, 4.1], [4.9, 2.9, 3.9]])
    train_rows = _curve("baseline", "train", [[5.0, 4.8, 4.9], [5.0, 4.7, 4.9], [5.1, 4.9, 5.0]])
    result = check_insertion_u_shape(val + train_rows)
    assert result["status"] == PASS
    assert result["min_fraction"] == 0.5 and result["deeper_on_validation"]
    assert result["validation_dip"] == pytest.approx(1.0)

    only_val = check_insertion_u_shape(val)
    assert only_val["status"] == PASS and only_val["deeper_on_validation"] is None

    shallower = _curve("baseline", "train", [[5.0, 2.0, 4.0]] * 3)
    assert check_insertion_u_shape(val + shallower)["status"] == FAIL
    monotone = _curve("baseline", "validation", [[5.0, 4.0, 3.0], [5.1, 4.1, 3.1]])
    assert check_insertion_u_shape(monotone)["status"] == FAIL
    assert check_insertion_u_shape(train_rows)["status"] == SKIPPED


def test_insertion_dip_must_exceed_standard_errors():
    noisy = _curve("baseline", "validation", [[5.0, 2.0, 5.0], [5.0, 4.0, 5.0]])
    result = check_insertion_u_shape(noisy)
    assert result["validation_dip"] == pytest.approx(2.0)
    assert result["validation_standard_error"] == pytest.approx(1.0)
    assert not result["u_shape"] and result["status"] == FAIL


def test_agreement_structure():
    stats = {
        "cib": {"intra_model.all": _stats(0.7), "inter_model.all": _stats(0.4)},
        "baseline": {"inter_model.noncausal": _stats(0.3, p_value=0.2)},
    }
    result = check_agreement_structure(stats)
    assert result["status"] == PASS and result["noncausal_p_value"] == 0.2

    stats["baseline"]["inter_model.noncausal"] = _stats(0.3, p_value=0.001)
    assert check_agreement_structure(stats)["status"] == FAIL
    stats["baseline"]["inter_model.noncausal"] = _stats(0.3, p_value=None, total=0)
    assert check_agreement_structure(stats)["status"] == PASS

    stats["cib"]["intra_model.all"] = _stats(0.3)
    assert check_agreement_structure(stats)["status"] == FAIL
    assert check_agreement_structure({"baseline": {}})["status"] == SKIPPED


def test_robustness_orderings():
    rows = [
        _robust("baseline", "gaussian_noise", 0.5, 12.0), _robust("cib", "gaussian_noise", 0.3, 8.0),
        _robust("baseline", "remove_causal", 1.2, 30.0), _robust("baseline", "remove_noncausal", 0.2, 4.0),
        _robust("cib", "remove_causal", 0.9, 25.0), _robust("cib", "remove_noncausal", 0.1, 2.0),
    ]
    result = check_robustness_orderings(rows, ["baseline", "cib"])
    assert result["status"] == PASS
    assert result["checks"] == {"noise_0.2": True, "removal_baseline": True, "removal_cib": True}

    rows[1] = _robust("cib", "gaussian_noise", 0.6, 15.0)
    result = check_robustness_orderings(rows, ["baseline", "cib"])
    assert result["status"] == FAIL and not result["checks"]["noise_0.2"]

    only_baseline = check_robustness_orderings(rows[:4], ["baseline"])
    assert list(only_baseline["checks"]) == ["removal_baseline"]
    assert check_robustness_orderings([], ["baseline"])["status"] == SKIPPED


def test_evaluate_acceptance_keys():
    results = evaluate_acceptance([_gap("baseline", "nll", 0.5, 1.0)], [], {}, [], ["baseline"], None)
    assert list(results) == ["gap_signs", "cib_gap_shrinkage", "insertion_u_shape", "agreement_structure",
                             "robustness_orderings"]
    assert results["gap_signs"]["status"] == FAIL
    assert all(r["status"] == SKIPPED for name, r in results.items() if name != "gap_signs")


# ============================================================
# 端到端方向
# ============================================================


@pytest.mark.slow
def test_kl_shrinks_as_beta_grows(scenes):
    opt = OptimizerConfig(lr=5e-3, epochs=4, batch_size=8)
    kls = []
    for beta in (0.01, 10.0):
        model = PredictorModel(PredictorConfig(d_model=8, K=3, n_heads=2, H=H, F=F, seed=0, use_cib=True, beta=beta))
        kls.append(train(model, scenes, opt).final_train_kl)
    assert kls[1] < kls[0]


@pytest.mark.slow
def test_leader_follower_model_uses_the_leader():
    base = GeneratorConfig(n_leader_follower=48, n_independent=0, n_spurious=0, n_mixed=0, max_agents=3,
                           max_extra_agents=1)
    train_scenes = generate_dataset(base, seed=5)
    val = generate_dataset(dataclasses.replace(base, n_leader_follower=16, split=Split.VALIDATION), seed=5)
    model = PredictorModel(PredictorConfig(d_model=16, K=3, n_heads=2, H=H, F=F, seed=0))
    train(model, train_scenes, OptimizerConfig(lr=3e-3, epochs=10, batch_size=16))

    kind = MetricKind.nll()
    with_agents = np.mean([value_function(model, s, s.agent_ids, kind) for s in val])
    without = np.mean([value_function(model, s, set(), kind) for s in val])
    assert with_agents < without


def test_target_future_ignores_noncausal_agents():
    lone = GeneratorConfig(n_leader_follower=6, n_independent=0, n_spurious=0, n_mixed=0, max_agents=4,
                           max_extra_agents=0, position_noise=0.0)
    crowded = dataclasses.replace(lone, min_extra_agents=2, max_extra_agents=2)
    for a, b in zip(generate_dataset(lone, seed=9), generate_dataset(crowded, seed=9)):
        assert [t.causal_label for t in a.surrounding] == [CausalLabel.CAUSAL]
        labels = sorted(t.causal_label.value for t in b.surrounding)
        assert labels.count(CausalLabel.CAUSAL.value) == 1 and len(labels) == 3
        np.testing.assert_allclose(a.target.future, b.target.future, atol=1e-6)


@pytest.mark.slow
def test_smoke_run_reports_acceptance(tmp_path):
    m = load_manifest(SMOKE_MANIFEST)
    pipeline = Pipeline(m, out_root=tmp_path / "runs", workers=2)
    pipeline.run_all()

    report_dir = pipeline.run_dir / "report"
    summary = json.loads((report_dir / "summary.json").read_text(encoding="utf-8"))
    acceptance = summary["acceptance"]
    assert list(acceptance) == ["gap_signs", "cib_gap_shrinkage", "insertion_u_shape", "agreement_structure",
                                "robustness_orderings"]
    assert all(entry["status"] in (PASS, FAIL) for entry in acceptance.values())

    gaps = {(r["variant"], r["metric"]): r for r in _read_csv(report_dir / "gaps.csv")}
    baseline_nll = gaps[("baseline", "nll")]
    assert float(baseline_nll["delta_no_all_mean"]) > 0
    assert acceptance["gap_signs"]["mean_delta_no_all"] == pytest.approx(float(baseline_nll["delta_no_all_mean"]))

    minade = next(k.label for k in m.metric_kinds() if k.name == MetricName.MIN_ADE)
    baseline_gap = abs(float(gaps[("baseline", minade)]["delta_super_all_mean"]))
    cib_gap = abs(float(gaps[("cib", minade)]["delta_super_all_mean"]))
    assert acceptance["cib_gap_shrinkage"]["status"] == (PASS if cib_gap <= baseline_gap else FAIL)
    assert set(summary["selected_beta"]) == {"s0", "s1"}
