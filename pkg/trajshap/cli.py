"""
命令行入口
==========

`trajshap <stage> --manifest PATH [--out DIR] [--workers N] [--force]`

退出码：0 成功，1 校验类错误（清单无效、缺少上游产物、校验和不一致），2 运行时错误。
"""

from pathlib import Path
from typing import Annotated, Optional

import typer

from .config import logger, TRAJSHAP_MANIFEST
from .core.attribution import EstimatorKind
from .errors import VALIDATION_ERRORS
from .harness import Pipeline, format_stage_result, load_manifest

app = typer.Typer(
    name="trajshap",
    help="轨迹预测的 Shapley 归因与 CIB 分析工具",
    add_completion=False,
    no_args_is_help=True,
)

ManifestOpt = Annotated[Optional[Path], typer.Option("--manifest", "-m", help="实验清单路径（缺省读 TRAJSHAP_MANIFEST）")]
OutOpt = Annotated[Optional[Path], typer.Option("--out", "-o", help="产物根目录（缺省读清单 out_dir 或 TRAJSHAP_OUT_DIR）")]
WorkersOpt = Annotated[Optional[int], typer.Option("--workers", "-w", min=1, help="并行 worker 数，结果与之无关")]
ForceOpt = Annotated[bool, typer.Option("--force", help="忽略清单或产物校验和不一致")]


def _run(stage: str, manifest: Optional[Path], out: Optional[Path], workers: Optional[int], force: bool,
         **options) -> None:
    try:
        path = manifest or (Path(TRAJSHAP_MANIFEST) if TRAJSHAP_MANIFEST else None)
        if path is None:
            typer.echo("❌ 请通过 --manifest 或环境变量 TRAJSHAP_MANIFEST 指定实验清单", err=True)
            raise typer.Exit(code=1)
        pipeline = Pipeline(load_manifest(path), out, workers, force)
        if stage == "run-all":
            results = pipeline.run_all(**options)
        else:
            results = [pipeline.run(stage, **options)]
    except typer.Exit:
        raise
    except VALIDATION_ERRORS as e:
        typer.echo(f"❌ {e}", err=True)
        raise typer.Exit(code=1)
    except Exception as e:
        logger.exception(f"阶段 {stage} 运行失败")
        typer.echo(f"❌ {type(e).__name__}: {e}", err=True)
        raise typer.Exit(code=2)
    for result in results:
        typer.echo(format_stage_result(result))


@app.command()
def gen(manifest: ManifestOpt = None, out: OutOpt = None, workers: WorkersOpt = None, force: ForceOpt = False):
    """生成训练集与验证集场景"""
    _run("gen", manifest, out, workers, force)


@app.command("sweep-beta")
def sweep_beta(manifest: ManifestOpt = None, out: OutOpt = None, workers: WorkersOpt = None, force: ForceOpt = False):
    """在 β 网格上训练 CIB 变体，按验证 NLL 选出最优 β"""
    _run("sweep-beta", manifest, out, workers, force)


@app.command()
def train(manifest: ManifestOpt = None, out: OutOpt = None, workers: WorkersOpt = None, force: ForceOpt = False):
    """按全部训练种子训练基线与 CIB 变体"""
    _run("train", manifest, out, workers, force)


@app.command()
def attr(
    manifest: ManifestOpt = None,
    out: OutOpt = None,
    workers: WorkersOpt = None,
    force: ForceOpt = False,
    estimator: Annotated[Optional[EstimatorKind], typer.Option("--estimator", "-e", help="exact | appro | auto")] = None,
):
    """计算每个模型在各数据划分上的 Shapley 归因"""
    _run("attr", manifest, out, workers, force, estimator=estimator)


@app.command()
def gaps(manifest: ManifestOpt = None, out: OutOpt = None, workers: WorkersOpt = None, force: ForceOpt = False):
    """All / Super / 无周边智能体 三种条件下的指标差距"""
    _run("gaps", manifest, out, workers, force)


@app.command()
def insert(manifest: ManifestOpt = None, out: OutOpt = None, workers: WorkersOpt = None, force: ForceOpt = False):
    """插入测试与删除测试曲线"""
    _run("insert", manifest, out, workers, force)


@app.command()
def agree(manifest: ManifestOpt = None, out: OutOpt = None, workers: WorkersOpt = None, force: ForceOpt = False):
    """模型间 / 模型内一致率直方图"""
    _run("agree", manifest, out, workers, force)


@app.command()
def robust(manifest: ManifestOpt = None, out: OutOpt = None, workers: WorkersOpt = None, force: ForceOpt = False):
    """噪声与移除扰动下的 Abs(Δ)"""
    _run("robust", manifest, out, workers, force)


@app.command()
def report(manifest: ManifestOpt = None, out: OutOpt = None, workers: WorkersOpt = None, force: ForceOpt = False):
    """汇总跨种子的均值 ± 标准差表格"""
    _run("report", manifest, out, workers, force)


@app.command("run-all")
def run_all(
    manifest: ManifestOpt = None,
    out: OutOpt = None,
    workers: WorkersOpt = None,
    force: ForceOpt = False,
    estimator: Annotated[Optional[EstimatorKind], typer.Option("--estimator", "-e", help="exact | appro | auto")] = None,
):
    """依次运行全部阶段（gen → sweep-beta → train → attr → gaps → insert → agree → robust → report）"""
    _run("run-all", manifest, out, workers, force, estimator=estimator)


if __name__ == "__main__":
    app()
