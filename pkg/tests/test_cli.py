import pytest
from typer.testing import CliRunner

from trajshap import cli
from trajshap.cli import app
from trajshap.core.scene import Split
from trajshap.harness import Pipeline, load_manifest
from trajshap.tools import config_tools, pipeline_tools, scene_tools
from trajshap.tools.config_tools import check_trajshap_config
from trajshap.tools.pipeline_tools import build_report, generate_scenes, run_insertion_test, train_models
from trajshap.tools.scene_tools import attribute_single_scene

from .conftest import TINY_MANIFEST

runner = CliRunner()


@pytest.fixture
def manifest_file(tmp_path):
    path = tmp_path / "tiny.env"
    path.write_text(TINY_MANIFEST + f"out_dir={tmp_path / 'runs'}\n", encoding="utf-8")
    return path


# ============================================================
# 命令行
# ============================================================


def test_cli_requires_manifest(monkeypatch):
    monkeypatch.setattr(cli, "TRAJSHAP_MANIFEST", None)
    result = runner.invoke(app, ["gen"])
    assert result.exit_code == 1
    assert "TRAJSHAP_MANIFEST" in result.output


def test_cli_invalid_manifest_exits_with_1(tmp_path):
    bad = tmp_path / "bad.env"
    bad.write_text("model.colour=red\n", encoding="utf-8")
    result = runner.invoke(app, ["gen", "--manifest", str(bad)])
    assert result.exit_code == 1
    assert "model.colour" in result.output


def test_cli_runs_stage_and_reports_missing_upstream(manifest_file, tmp_path):
    result = runner.invoke(app, ["gen", "-m", str(manifest_file), "-o", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    assert "✅ 阶段 gen 完成" in result.output

    result = runner.invoke(app, ["report", "-m", str(manifest_file), "-o", str(tmp_path / "out")])
    assert result.exit_code == 1
    assert "trajshap train" in result.output


def test_cli_rejects_unknown_estimator(manifest_file):
    result = runner.invoke(app, ["attr", "-m", str(manifest_file), "--estimator", "guess"])
    assert result.exit_code == 2


# ============================================================
# MCP 工具
# ============================================================


def test_tools_report_missing_manifest(monkeypatch):
    monkeypatch.setattr(pipeline_tools, "TRAJSHAP_MANIFEST", None)
    monkeypatch.setattr(scene_tools, "TRAJSHAP_MANIFEST", None)
    assert generate_scenes().startswith("❌ 未指定实验清单")
    assert attribute_single_scene(0).startswith("❌")


def test_tools_never_raise(manifest_file):
    text = run_insertion_test(manifest_path=str(manifest_file))
    assert text.startswith("❌") and "💡" in text
    assert build_report(manifest_path=str(manifest_file / "missing")).startswith("❌")


def test_config_tool(monkeypatch, manifest_file):
    monkeypatch.setattr(config_tools, "TRAJSHAP_MANIFEST", None)
    text = check_trajshap_config()
    assert "TrajShap 配置检查" in text and "未设置" in text

    monkeypatch.setattr(config_tools, "TRAJSHAP_MANIFEST", str(manifest_file))
    assert "尚未运行任何阶段" in check_trajshap_config()
    assert generate_scenes(manifest_path=str(manifest_file)).startswith("✅ 阶段 gen 完成")
    assert "✅ gen: 2 个产物" in check_trajshap_config()


@pytest.mark.slow
def test_single_scene_tool(manifest_file):
    assert "✅" in generate_scenes(manifest_path=str(manifest_file))
    assert "✅" in train_models(manifest_path=str(manifest_file))
    pipeline = Pipeline(load_manifest(manifest_file))
    scene_id = pipeline.scenes(Split.VALIDATION)[0].scene_id

    text = attribute_single_scene(scene_id, variant="cib", manifest_path=str(manifest_file))
    assert text.startswith(f"🎯 scene {scene_id}")
    assert "Super Agents" in text and "有效性残差" in text

    assert attribute_single_scene(scene_id, variant="large", manifest_path=str(manifest_file)).startswith("❌")
    assert attribute_single_scene(10_000, manifest_path=str(manifest_file)).startswith("❌")
    assert attribute_single_scene(scene_id, metric="brier", manifest_path=str(manifest_file)).startswith("❌")
