import json

import pytest

from trajshap.core.metrics import MetricKind
from trajshap.core.scene import Split
from trajshap.errors import ConfigError, InvalidArgumentError, ManifestDriftError, MissingArtifactError
from trajshap.harness import Pipeline, RunRecord, format_stage_result, load_manifest, manifest_keys

from .conftest import TINY_MANIFEST


def _manifest(tmp_path, extra="", name="tiny.env"):
    path = tmp_path / name
    path.write_text(TINY_MANIFEST + extra, encoding="utf-8")
    return load_manifest(path)


# ============================================================
# 实验清单
# ============================================================


def test_load_manifest(tmp_path):
    m = _manifest(tmp_path)
    assert m.model.K == 3 and m.seeds.train == [0, 1]
    assert m.variants == ["baseline", "cib"]
    assert m.metric_kinds() == [MetricKind.nll(), MetricKind.min_ade(3), MetricKind.miss_rate(None, 2.0)]
    cfg = m.predictor_config(True, 0.5, 1)
    assert cfg.use_cib and cfg.beta == 0.5 and cfg.H == 10 and cfg.F == 12
    assert m.predictor_config(False, 0.5, 1).beta == 0.0


@pytest.mark.parametrize("extra, fragment", [
    ("warp.speed=9\n", "warp.speed"),
    ("model.K=abc\n", "model.K"),
    ("metrics.names=minade,minfde\n", "nll"),
    ("metrics.names=nll,minade@6\n", "K'"),
    ("seeds.train=1,1\n", "seeds.train"),
    ("robust.sigmas=0.0\n", "robust.sigmas"),
])
def test_invalid_manifest(tmp_path, extra, fragment):
    with pytest.raises(ConfigError, match=fragment):
        _manifest(tmp_path, extra)


def test_missing_manifest_file(tmp_path):
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "nope.env")


def test_checksum_ignores_output_dir(tmp_path):
    base = _manifest(tmp_path)
    moved = _manifest(tmp_path, "out_dir=/somewhere/else\n", name="moved.env")
    changed = _manifest(tmp_path, "opt.lr=0.01\n", name="changed.env")
    assert moved.out_dir == "/somewhere/else"
    assert base.checksum == moved.checksum
    assert base.checksum != changed.checksum
    assert len(base.short_checksum) == 12


def test_validation_split_is_scaled(tmp_path):
    m = _manifest(tmp_path)
    val = m.generator_config(Split.VALIDATION)
    assert val.split == Split.VALIDATION
    assert (val.n_leader_follower, val.n_independent, val.n_spurious, val.n_mixed) == (2, 1, 1, 2)
    assert m.generator_config(Split.TRAIN).n_mixed == 4


def test_manifest_keys():
    keys = manifest_keys()
    assert "gen.val_fraction" in keys and "cib.beta_grid" in keys
    assert "gen.split" not in keys


# ============================================================
# 流水线
# ============================================================


def test_stage_requires_upstream(tmp_path):
    pipeline = Pipeline(_manifest(tmp_path), out_root=tmp_path / "runs")
    with pytest.raises(MissingArtifactError) as err:
        pipeline.run("train")
    assert err.value.stage == "gen"
    with pytest.raises(InvalidArgumentError):
        pipeline.run("deploy")


def test_report_names_missing_attr_stage(tmp_path):
    pipeline = Pipeline(_manifest(tmp_path), out_root=tmp_path / "runs")
    pipeline.run("gen")
    pipeline.run("train")
    with pytest.raises(MissingArtifactError) as err:
        pipeline.run("report")
    assert err.value.stage == "attr"
    assert "trajshap attr" in str(err.value)


def test_gen_stage_outputs(tmp_path):
    m = _manifest(tmp_path)
    pipeline = Pipeline(m, out_root=tmp_path / "runs")
    result = pipeline.run("gen")
    assert pipeline.run_dir == tmp_path / "runs" / m.short_checksum
    assert [p.name for p in result.artifacts] == ["scenes.train.s7.jsonl", "scenes.val.s7.jsonl"]
    assert result.summary["train_scenes"] == 12 and result.summary["val_scenes"] == 6
    record = json.loads((pipeline.run_dir / "run_record.json").read_text(encoding="utf-8"))
    assert record["manifest_checksum"] == m.checksum
    assert sorted(record["stages"]["gen"]["artifacts"]) == ["scenes.train.s7.jsonl", "scenes.val.s7.jsonl"]
    assert "✅ 阶段 gen 完成" in format_stage_result(result)


def test_modified_artifact_is_detected(tmp_path):
    m = _manifest(tmp_path)
    pipeline = Pipeline(m, out_root=tmp_path / "runs")
    pipeline.run("gen")
    with open(pipeline.scenes_path(Split.TRAIN), "a", encoding="utf-8") as fh:
        fh.write("\n")
    with pytest.raises(ManifestDriftError):
        Pipeline(m, out_root=tmp_path / "runs").run("train")
    result = Pipeline(m, out_root=tmp_path / "runs", force=True).run("train")
    assert len(result.artifacts) == 2 * 2 * 2
    counts = result.summary["parameter_count"]
    assert 0 < counts["baseline"] < counts["cib"]


def test_foreign_run_record_is_rejected(tmp_path):
    m = _manifest(tmp_path)
    run_dir = tmp_path / "runs" / m.short_checksum
    RunRecord(manifest_checksum="0" * 64).save(run_dir)
    with pytest.raises(ManifestDriftError):
        Pipeline(m, out_root=tmp_path / "runs")
    assert Pipeline(m, out_root=tmp_path / "runs", force=True).record.manifest_checksum == m.checksum


def test_beta_sweep_feeds_training(tmp_path):
    m = _manifest(tmp_path, "cib.beta_mode=sweep\ncib.beta_grid=0.1,1.0\nseeds.train=0\n")
    pipeline = Pipeline(m, out_root=tmp_path / "runs")
    pipeline.run("gen")
    assert "sweep-beta" in pipeline.requirements("train")
    with pytest.raises(MissingArtifactError) as err:
        pipeline.run("train")
    assert err.value.stage == "sweep-beta"
    result = pipeline.run("sweep-beta")
    assert result.summary["best_beta"] in (0.1, 1.0)
    assert pipeline.selected_beta() == result.summary["best_beta"]
    train = pipeline.run("train")
    assert train.summary["beta"] == result.summary["best_beta"]
    assert pipeline.model("cib", 0).config.beta == result.summary["best_beta"]


def test_per_seed_beta_sweep(tmp_path):
    m = _manifest(tmp_path, "cib.beta_mode=sweep_per_seed\ncib.beta_grid=0.1,1.0\n")
    pipeline = Pipeline(m, out_root=tmp_path / "runs")
    pipeline.run("gen")
    result = pipeline.run("sweep-beta")
    assert sorted(p.name for p in result.artifacts) == ["sweep.s0.csv", "sweep.s0.json", "sweep.s1.csv",
                                                        "sweep.s1.json"]
    per_seed = result.summary["best_beta_per_seed"]
    assert set(per_seed) == {"s0", "s1"} and set(per_seed.values()) <= {0.1, 1.0}
    assert result.summary["best_beta"] == per_seed["s0"]
    train = pipeline.run("train")
    assert train.summary["beta_per_seed"] == per_seed
    for seed in (0, 1):
        assert pipeline.selected_beta(seed) == per_seed[f"s{seed}"]
        assert pipeline.model("cib", seed).config.beta == per_seed[f"s{seed}"]


@pytest.mark.slow
def test_full_run_is_reproducible(tmp_path):
    m = _manifest(tmp_path)
    first = Pipeline(m, out_root=tmp_path / "a", workers=1)
    results = first.run_all()
    assert [r.stage for r in results] == ["gen", "train", "attr", "gaps", "insert", "agree", "robust", "report"]

    report_dir = first.run_dir / "report"
    for name in ("gaps.csv", "robustness.csv", "insertion.csv", "agreement.csv", "summary.json"):
        assert (report_dir / name).is_file()
    summary = json.loads((report_dir / "summary.json").read_text(encoding="utf-8"))
    assert summary["manifest_checksum"] == m.checksum
    assert {row["variant"] for row in summary["gaps"]} == {"baseline", "cib"}
    assert all(row["n_seeds"] == 2 for row in summary["gaps"])
    assert set(summary["agreement"]["cib"]) >= {"inter_model.all", "intra_model.all"}

    second = Pipeline(m, out_root=tmp_path / "b", workers=2)
    second.run_all()
    for stage, entry in first.record.stages.items():
        assert second.record.stages[stage].artifacts == entry.artifacts, stage


@pytest.mark.slow
def test_rerunning_a_stage_is_idempotent(tmp_path):
    m = _manifest(tmp_path, "cib.enabled=false\nseeds.train=0\n")
    pipeline = Pipeline(m, out_root=tmp_path / "runs")
    pipeline.run("gen")
    pipeline.run("train")
    before = pipeline.run("attr", estimator="exact")
    digests = dict(pipeline.record.stages["attr"].artifacts)
    again = Pipeline(m, out_root=tmp_path / "runs").run("attr", estimator="exact")
    assert [p.name for p in again.artifacts] == [p.name for p in before.artifacts]
    assert Pipeline(m, out_root=tmp_path / "runs").record.stages["attr"].artifacts == digests
    with pytest.raises(InvalidArgumentError):
        pipeline.run("attr", estimator="bogus")
