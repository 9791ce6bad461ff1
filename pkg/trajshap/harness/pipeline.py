"""
实验流水线
==========

把各模块串成可复现的阶段：gen → sweep-beta → train → attr → gaps / insert / agree / robust → report。

- 产物目录：<out>/<清单校验和前 12 位>/，产物命名为 stage.variant[.split].s<seed>.ext
- 每个阶段先校验上游产物（存在且校验和与运行记录一致），结束后把产物校验和与耗时写入 run_record.json
- 产物中不含时间戳；相同清单总是得到逐字节相同的产物
"""

import functools
import json
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

from ..config import (
    logger, DEFAULT_WORKERS, PIPELINE_STAGES, STAGE_REQUIREMENTS, TOOLKIT_VERSION, TRAJSHAP_OUT_DIR
)
from ..core.analysis import (
    AgreementMode, InsertionOrder, agreement, causal_alignment, chi_square_against_baseline,
    deletion_test, extreme_mass, insertion_test, scene_labels, write_curves_csv,
    write_histograms_csv
)
from ..core.attribution import (
    AttributionResult, EstimatorKind, attribute_dataset, dummy_agent_check, gap_report, load_attributions,
    save_attributions, super_agents
)
from ..core.metrics import MetricKind, MetricName
from ..core.predictor import PredictorModel, load_checkpoint, save_checkpoint, train
from ..core.robustness import PerturbationKind, PerturbationSpec, abs_delta, write_reports_csv
from ..core.scene import Scene, Split, generate_dataset, load_scenes, save_scenes
from ..errors import InvalidArgumentError, ManifestDriftError, MissingArtifactError
from ..utils import _mean_std, _parallel_map, _read_csv, _write_csv, _write_json
from .acceptance import evaluate_acceptance
from .manifest import BetaMode, ExperimentManifest, RunRecord

_SPLIT_TAG = {Split.TRAIN: "train", Split.VALIDATION: "val"}


@dataclass
class StageResult:
    """一个阶段的执行结果"""

    stage: str
    artifacts: List[Path]
    seconds: float
    summary: Dict[str, Any] = field(default_factory=dict)


# ============================================================
# 并行任务（模块级函数，便于 joblib 序列化）
# ============================================================


def _train_job(task: Tuple[str, int, float], manifest: ExperimentManifest,
               train_scenes: Sequence[Scene], val_scenes: Sequence[Scene]):
    variant, seed, beta = task
    model = PredictorModel(manifest.predictor_config(variant == "cib", beta, seed))
    report = train(model, train_scenes, manifest.opt, val_scenes)
    return model, report


def _sweep_job(task: Tuple[int, float], manifest: ExperimentManifest,
               train_scenes: Sequence[Scene], val_scenes: Sequence[Scene]) -> Dict[str, float]:
    if not val_scenes:
        raise InvalidArgumentError("β 扫描需要非空的验证集")
    seed, beta = task
    _, report = _train_job(("cib", seed, beta), manifest, train_scenes, val_scenes)
    return {"beta": beta, "val_nll": report.final_val_nll, "train_kl": report.final_train_kl}


class Pipeline:
    """
    一次实验运行

    Args:
        manifest: 实验清单
        out_root: 输出根目录，缺省依次取清单 out_dir、TRAJSHAP_OUT_DIR
        workers: 并行 worker 数，结果与之无关
        force: 忽略校验和不一致
    """

    def __init__(
        self,
        manifest: ExperimentManifest,
        out_root: Optional[Path] = None,
        workers: Optional[int] = None,
        force: bool = False
    ):
        self.manifest = manifest
        root = Path(out_root or manifest.out_dir or TRAJSHAP_OUT_DIR)
        self.run_dir = root / manifest.short_checksum
        self.workers = max(1, workers or DEFAULT_WORKERS)
        self.force = force
        self.record = RunRecord.load_or_create(self.run_dir, manifest)
        if self.record.manifest_checksum != manifest.checksum and not force:
            raise ManifestDriftError(
                f"{self.run_dir} 属于另一个实验清单 (checksum {self.record.manifest_checksum[:12]})；"
                f"如确认要覆盖请使用 --force"
            )
        self.record.manifest_checksum = manifest.checksum
        self._scene_cache: Dict[Split, List[Scene]] = {}

    # ------------------------------------------------------------
    # 通用
    # ------------------------------------------------------------

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def metadata(self, stage: str, **extra: Any) -> Dict[str, Any]:
        return {"manifest_checksum": self.manifest.checksum, "toolkit_version": TOOLKIT_VERSION,
                "stage": stage, **extra}

    def requirements(self, stage: str) -> List[str]:
        reqs = list(STAGE_REQUIREMENTS[stage])
        if stage == "train" and self._sweep_enabled:
            reqs.append("sweep-beta")
        return reqs

    @property
    def _sweep_enabled(self) -> bool:
        return self.manifest.cib.enabled and self.manifest.cib.beta_mode != BetaMode.FIXED

    @property
    def _sweep_seeds(self) -> List[int]:
        seeds = self.manifest.seeds.train
        return list(seeds) if self.manifest.cib.beta_mode == BetaMode.SWEEP_PER_SEED else [seeds[0]]

    def check_upstream(self, stage: str) -> None:
        """
        校验上游阶段产物

        Raises:
            MissingArtifactError: 上游产物缺失（给出要运行的命令）
            ManifestDriftError: 上游产物被修改且未指定 force
        """
        for upstream in self.requirements(stage):
            status = self.record.verify_stage(upstream, self.run_dir)
            if status == "missing":
                raise MissingArtifactError(upstream, f"{stage} 依赖它")
            if status is not None and not self.force:
                raise ManifestDriftError(
                    f"产物 {status} 的校验和与运行记录不一致；重新运行 `{upstream}` 或使用 --force"
                )

    def _finish(self, stage: str, artifacts: List[Path], start: float, summary: Dict[str, Any]) -> StageResult:
        seconds = time.perf_counter() - start
        self.record.record_stage(stage, self.run_dir, artifacts, seconds)
        self.record.save(self.run_dir)
        logger.info(f"阶段 {stage} 完成: {len(artifacts)} 个产物, {seconds:.1f}s")
        return StageResult(stage=stage, artifacts=artifacts, seconds=seconds, summary=summary)

    def run(self, stage: str, **options: Any) -> StageResult:
        handlers: Dict[str, Callable[..., StageResult]] = {
            "gen": self.run_gen,
            "sweep-beta": self.run_sweep_beta,
            "train": self.run_train,
            "attr": self.run_attr,
            "gaps": self.run_gaps,
            "insert": self.run_insert,
            "agree": self.run_agree,
            "robust": self.run_robust,
            "report": self.run_report,
        }
        if stage not in handlers:
            raise InvalidArgumentError(f"未知的阶段: {stage}（可选: {', '.join(PIPELINE_STAGES)}）")
        self.check_upstream(stage)
        logger.info(f"正在运行阶段 {stage} ({self.run_dir})...")
        return handlers[stage](**options)

    def run_all(self, **options: Any) -> List[StageResult]:
        results = []
        for stage in PIPELINE_STAGES:
            if stage == "sweep-beta" and not self._sweep_enabled:
                continue
            stage_options = options if stage == "attr" else {}
            results.append(self.run(stage, **stage_options))
        return results

    # ------------------------------------------------------------
    # 产物读取
    # ------------------------------------------------------------

    def scenes_path(self, split: Split) -> Path:
        return self.path(f"scenes.{_SPLIT_TAG[split]}.s{self.manifest.seeds.data}.jsonl")

    def scenes(self, split: Split) -> List[Scene]:
        if split not in self._scene_cache:
            self._scene_cache[split] = load_scenes(self.scenes_path(split))
        return self._scene_cache[split]

    def attr_scenes(self, split: Split) -> List[Scene]:
        scenes = sorted(self.scenes(split), key=lambda s: s.scene_id)
        limit = self.manifest.attr.max_scenes
        return scenes if limit is None else scenes[:limit]

    def model_path(self, variant: str, seed: int) -> Path:
        return self.path(f"model.{variant}.s{seed}.json")

    def model(self, variant: str, seed: int) -> PredictorModel:
        return load_checkpoint(self.model_path(variant, seed))

    def attr_path(self, variant: str, split: Split, seed: int) -> Path:
        return self.path(f"attr.{variant}.{_SPLIT_TAG[split]}.s{seed}.jsonl")

    def intra_path(self, variant: str, seed: int, inference_seed: int) -> Path:
        return self.path(f"attr.{variant}.intra.s{seed}.i{inference_seed}.jsonl")

    def attributions(self, path: Path, metric: Optional[MetricKind] = None) -> List[AttributionResult]:
        results, _ = load_attributions(path)
        if metric is not None:
            results = [r for r in results if r.metric == metric]
        return results

    def _intra_variant(self) -> Optional[str]:
        """模型内一致率只对有随机推理的 CIB 变体有意义"""
        return "cib" if self.manifest.cib.enabled and len(self.manifest.seeds.inference) >= 2 else None

    def _train_splits(self) -> List[Split]:
        return [Split.VALIDATION, Split.TRAIN] if self.manifest.analysis.train_split else [Split.VALIDATION]

    # ------------------------------------------------------------
    # 阶段
    # ------------------------------------------------------------

    def run_gen(self) -> StageResult:
        start = time.perf_counter()
        seed = self.manifest.seeds.data
        artifacts, summary = [], {}
        for split in (Split.TRAIN, Split.VALIDATION):
            scenes = generate_dataset(self.manifest.generator_config(split), seed)
            self._scene_cache[split] = scenes
            artifacts.append(save_scenes(self.scenes_path(split), scenes))
            summary[f"{_SPLIT_TAG[split]}_scenes"] = len(scenes)
            summary[f"{_SPLIT_TAG[split]}_max_agents"] = max((s.n_agents for s in scenes), default=0)
        return self._finish("gen", artifacts, start, summary)

    def run_sweep_beta(self) -> StageResult:
        start = time.perf_counter()
        m = self.manifest
        job = functools.partial(_sweep_job, manifest=m, train_scenes=self.scenes(Split.TRAIN),
                                val_scenes=self.scenes(Split.VALIDATION))
        grid = list(m.cib.beta_grid)
        tasks = [(seed, beta) for seed in self._sweep_seeds for beta in grid]
        outcomes = _parallel_map(job, tasks, self.workers)
        artifacts, best_per_seed = [], {}
        for i, seed in enumerate(self._sweep_seeds):
            rows = outcomes[i * len(grid):(i + 1) * len(grid)]
            best = min(rows, key=lambda r: (r["val_nll"], r["beta"]))
            best_per_seed[f"s{seed}"] = best["beta"]
            artifacts.append(_write_csv(self.path(f"sweep.s{seed}.csv"), ["beta", "val_nll", "train_kl"], rows,
                                        self.metadata("sweep-beta", seed=seed)))
            artifacts.append(_write_json(self.path(f"sweep.s{seed}.json"), {"best_beta": best["beta"], "rows": rows}))
        summary = {"best_beta": best_per_seed[f"s{m.seeds.train[0]}"], "best_beta_per_seed": best_per_seed}
        return self._finish("sweep-beta", artifacts, start, summary)

    def selected_beta(self, seed: Optional[int] = None) -> float:
        """
        CIB 变体训练用的 β

        fixed 返回 cib.beta；sweep 所有种子共用首个训练种子的扫描结果；
        sweep_per_seed 读取 seed 自己的扫描结果（缺省取首个训练种子）。
        """
        m = self.manifest
        if not self._sweep_enabled:
            return m.cib.beta
        if seed is None or m.cib.beta_mode == BetaMode.SWEEP:
            seed = m.seeds.train[0]
        path = self.path(f"sweep.s{seed}.json")
        if not path.is_file():
            raise MissingArtifactError("sweep-beta", str(path))
        return float(json.loads(path.read_text(encoding="utf-8"))["best_beta"])

    def run_train(self) -> StageResult:
        start = time.perf_counter()
        m = self.manifest
        betas = {seed: self.selected_beta(seed) if m.cib.enabled else 0.0 for seed in m.seeds.train}
        tasks = [(variant, seed, betas[seed] if variant == "cib" else 0.0)
                 for variant in m.variants for seed in m.seeds.train]
        job = functools.partial(_train_job, manifest=m, train_scenes=self.scenes(Split.TRAIN),
                                val_scenes=self.scenes(Split.VALIDATION))
        outcomes = _parallel_map(job, tasks, self.workers)
        artifacts = []
        summary = {"beta": betas[m.seeds.train[0]], "beta_per_seed": {f"s{s}": b for s, b in betas.items()},
                   "final_val_nll": {}, "parameter_count": {}}
        for (variant, seed, _), (model, report) in zip(tasks, outcomes):
            artifacts.append(save_checkpoint(model, self.model_path(variant, seed)))
            artifacts.append(_write_json(self.path(f"train.{variant}.s{seed}.json"), report))
            summary["final_val_nll"][f"{variant}.s{seed}"] = report.final_val_nll
            summary["parameter_count"][variant] = model.parameter_count()
        return self._finish("train", artifacts, start, summary)

    def run_attr(self, estimator: Optional[Union[str, EstimatorKind]] = None) -> StageResult:
        start = time.perf_counter()
        m = self.manifest
        try:
            estimator = EstimatorKind(estimator or m.attr.estimator)
        except ValueError as exc:
            raise InvalidArgumentError(f"未知的估计器: {estimator}（可选: exact, appro, auto）") from exc
        metrics = m.metric_kinds()
        nll = MetricKind.nll()
        artifacts, summary = [], {"estimator": estimator.value, "dummy_max_abs_phi": {}}
        for variant in m.variants:
            for seed in m.seeds.train:
                model = self.model(variant, seed)
                meta = {"model_checksum": model.checksum(), "estimator": summary["estimator"],
                        "seed": m.seeds.attr, "variant": variant, "train_seed": seed}
                for split in self._train_splits():
                    results = attribute_dataset(
                        model, self.attr_scenes(split), metrics, estimator, m.attr.permutations,
                        m.seeds.attr, 0, False, m.attr.n_exact_max, self.workers,
                    )
                    flat = [r for label in sorted(results) for r in results[label]]
                    artifacts.append(save_attributions(self.attr_path(variant, split, seed), flat,
                                                       {**meta, "split": _SPLIT_TAG[split]}))
                dummy = dummy_agent_check(model, self.attr_scenes(Split.VALIDATION)[:m.attr.dummy_scenes],
                                          nll, m.seeds.attr, m.attr.n_exact_max)
                summary["dummy_max_abs_phi"][f"{variant}.s{seed}"] = max(dummy, default=0.0)
                artifacts.append(_write_json(self.path(f"dummy.{variant}.s{seed}.json"),
                                             {"abs_phi": dummy, "metric": nll.label}))
        intra = self._intra_variant()
        if intra is not None:
            seed = m.seeds.train[0]
            model = self.model(intra, seed)
            for inference_seed in m.seeds.inference:
                results = attribute_dataset(
                    model, self.attr_scenes(Split.VALIDATION), [nll], estimator, m.attr.permutations,
                    m.seeds.attr, inference_seed, True, m.attr.n_exact_max, self.workers,
                )
                artifacts.append(save_attributions(
                    self.intra_path(intra, seed, inference_seed), results[nll.label],
                    {"model_checksum": model.checksum(), "estimator": summary["estimator"], "seed": m.seeds.attr,
                     "variant": intra, "train_seed": seed, "inference_seed": inference_seed, "stochastic": True},
                ))
        return self._finish("attr", artifacts, start, summary)

    def run_gaps(self) -> StageResult:
        start = time.perf_counter()
        m = self.manifest
        scenes = self.attr_scenes(Split.VALIDATION)
        fields = ["variant", "seed", "metric", "m_all", "m_super", "m_none", "delta_super_all", "delta_no_all",
                  "n_scenes"]
        artifacts, summary = [], {}
        for variant in m.variants:
            for seed in m.seeds.train:
                model = self.model(variant, seed)
                nll_results = self.attributions(self.attr_path(variant, Split.VALIDATION, seed), MetricKind.nll())
                supers = [super_agents(r) for r in nll_results]
                rows = []
                for metric in m.metric_kinds():
                    gap = gap_report(model, scenes, metric, supers, 0, self.workers)
                    rows.append({"variant": variant, "seed": seed, "metric": metric.label, "m_all": gap.m_all,
                                 "m_super": gap.m_super, "m_none": gap.m_none,
                                 "delta_super_all": gap.delta_super_all, "delta_no_all": gap.delta_no_all,
                                 "n_scenes": gap.n_scenes})
                    if metric.is_nll:
                        summary[f"{variant}.s{seed}"] = {"delta_super_all": gap.delta_super_all,
                                                         "delta_no_all": gap.delta_no_all}
                artifacts.append(_write_csv(self.path(f"gaps.{variant}.s{seed}.csv"), fields, rows,
                                            self.metadata("gaps", variant=variant, seed=seed)))
        return self._finish("gaps", artifacts, start, summary)

    def run_insert(self) -> StageResult:
        start = time.perf_counter()
        m = self.manifest
        nll = MetricKind.nll()
        artifacts, summary = [], {}
        for variant in m.variants:
            for seed in m.seeds.train:
                model = self.model(variant, seed)
                curves = []
                for split in self._train_splits():
                    scenes = self.attr_scenes(split)
                    attrs = self.attributions(self.attr_path(variant, split, seed), nll)
                    curve = insertion_test(model, scenes, attrs, nll, split, InsertionOrder.MOST_HELPFUL_FIRST,
                                           m.analysis.insertion_steps, 0, self.workers)
                    curves.append(curve)
                    summary[f"{variant}.s{seed}.{_SPLIT_TAG[split]}.dip"] = curve.dip
                    if split == Split.VALIDATION:
                        curves.append(deletion_test(model, scenes, attrs, nll, split,
                                                    InsertionOrder.MOST_HELPFUL_FIRST,
                                                    m.analysis.insertion_steps, 0, self.workers))
                artifacts.append(write_curves_csv(self.path(f"insert.{variant}.s{seed}.csv"), curves,
                                                  self.metadata("insert", variant=variant, seed=seed)))
        return self._finish("insert", artifacts, start, summary)

    def run_agree(self) -> StageResult:
        start = time.perf_counter()
        m = self.manifest
        nll = MetricKind.nll()
        labels = scene_labels(self.attr_scenes(Split.VALIDATION))
        artifacts, summary = [], {}
        for variant in m.variants:
            hists, stats = [], {}
            if len(m.seeds.train) >= 2:
                runs = [self.attributions(self.attr_path(variant, Split.VALIDATION, s), nll) for s in m.seeds.train]
                hists.append(agreement(runs, AgreementMode.INTER_MODEL))
                hists.extend(causal_alignment(runs, labels, AgreementMode.INTER_MODEL))
            else:
                logger.warning(f"{variant}: 训练种子少于 2 个，跳过模型间一致率")
            if variant == self._intra_variant():
                seed = m.seeds.train[0]
                runs = [self.attributions(self.intra_path(variant, seed, i), nll) for i in m.seeds.inference]
                hists.append(agreement(runs, AgreementMode.INTRA_MODEL))
                hists.extend(causal_alignment(runs, labels, AgreementMode.INTRA_MODEL))
            for hist in hists:
                test = chi_square_against_baseline(hist)
                stats[f"{hist.mode.value}.{hist.label_filter.value}"] = {
                    "N": hist.N, "total": hist.total, "extreme_mass": extreme_mass(hist),
                    "chi2": test.statistic, "dof": test.dof, "p_value": test.p_value,
                    "full_agreement_mean_phi": hist.full_agreement_mean_phi,
                }
            artifacts.append(write_histograms_csv(self.path(f"agree.{variant}.csv"), hists,
                                                  self.metadata("agree", variant=variant)))
            artifacts.append(_write_json(self.path(f"agree.{variant}.json"), stats))
            summary[variant] = {k: v["extreme_mass"] for k, v in stats.items()}
        return self._finish("agree", artifacts, start, summary)

    def perturbations(self) -> List[PerturbationSpec]:
        m = self.manifest
        specs = [PerturbationSpec.noise(s, m.seeds.noise, m.robust.include_target, m.gen.dt) for s in m.robust.sigmas]
        specs.append(PerturbationSpec(PerturbationKind.REMOVE_CAUSAL, seed=m.seeds.noise, dt=m.gen.dt))
        specs.append(PerturbationSpec(PerturbationKind.REMOVE_NON_CAUSAL, seed=m.seeds.noise, dt=m.gen.dt))
        return specs

    def run_robust(self) -> StageResult:
        start = time.perf_counter()
        m = self.manifest
        metric = m.robust_metric()
        scenes = self.attr_scenes(Split.VALIDATION)
        artifacts, summary = [], {}
        for variant in m.variants:
            for seed in m.seeds.train:
                model = self.model(variant, seed)
                reports = [abs_delta(model, scenes, spec, metric, 0, self.workers) for spec in self.perturbations()]
                for report in reports:
                    summary[f"{variant}.s{seed}.{report.spec.label}"] = report.percent_abs_delta
                artifacts.append(write_reports_csv(self.path(f"robust.{variant}.s{seed}.csv"), reports,
                                                   self.metadata("robust", variant=variant, seed=seed)))
        return self._finish("robust", artifacts, start, summary)

    # ------------------------------------------------------------
    # 汇总
    # ------------------------------------------------------------

    def run_report(self) -> StageResult:
        start = time.perf_counter()
        m = self.manifest
        meta = self.metadata("report", seeds=",".join(str(s) for s in m.seeds.train))

        gap_rows = [r for v in m.variants for s in m.seeds.train for r in _read_csv(self.path(f"gaps.{v}.s{s}.csv"))]
        gaps = _aggregate(gap_rows, ["variant", "metric"],
                          ["m_all", "m_super", "m_none", "delta_super_all", "delta_no_all"])
        for row in gaps:
            deltas = [float(r["delta_super_all"]) for r in gap_rows
                      if r["variant"] == row["variant"] and r["metric"] == row["metric"]]
            row["super_better_seeds"] = sum(1 for d in deltas if d < 0)

        robust_rows = [r for v in m.variants for s in m.seeds.train
                       for r in _tag(_read_csv(self.path(f"robust.{v}.s{s}.csv")), variant=v, seed=s)]
        robustness = _aggregate(robust_rows, ["variant", "perturbation", "sigma"], ["abs_delta", "percent_abs_delta"])

        insert_rows = [r for v in m.variants for s in m.seeds.train
                       for r in _tag(_read_csv(self.path(f"insert.{v}.s{s}.csv")), variant=v, seed=s)]
        insertion = _aggregate(insert_rows, ["variant", "direction", "split", "fraction"], ["value"])

        agreement_rows = [r for v in m.variants for r in _tag(_read_csv(self.path(f"agree.{v}.csv")), variant=v)]
        agreement_stats = {v: json.loads(self.path(f"agree.{v}.json").read_text(encoding="utf-8")) for v in m.variants}
        dummy = {f"{v}.s{s}": max(json.loads(self.path(f"dummy.{v}.s{s}.json").read_text(encoding="utf-8"))["abs_phi"],
                                  default=0.0)
                 for v in m.variants for s in m.seeds.train}

        report_dir = self.path("report")
        gap_fields = ["variant", "metric"] + _stat_fields(["m_all", "m_super", "m_none", "delta_super_all",
                                                            "delta_no_all"]) + ["super_better_seeds", "n_seeds"]
        artifacts = [
            _write_csv(report_dir / "gaps.csv", gap_fields, gaps, meta),
            _write_csv(report_dir / "robustness.csv",
                       ["variant", "perturbation", "sigma"] + _stat_fields(["abs_delta", "percent_abs_delta"]) + ["n_seeds"],
                       robustness, meta),
            _write_csv(report_dir / "insertion.csv",
                       ["variant", "direction", "split", "fraction"] + _stat_fields(["value"]) + ["n_seeds"],
                       insertion, meta),
            _write_csv(report_dir / "agreement.csv",
                       ["variant", "mode", "label_filter", "N", "r", "count", "baseline", "mean_phi"],
                       agreement_rows, meta),
        ]
        summary = {
            "manifest_checksum": m.checksum,
            "toolkit_version": TOOLKIT_VERSION,
            "variants": m.variants,
            "train_seeds": m.seeds.train,
            "gaps": gaps,
            "robustness": robustness,
            "agreement": agreement_stats,
            "dummy_max_abs_phi": dummy,
        }
        if self._sweep_enabled:
            summary["selected_beta"] = {f"s{s}": self.selected_beta(s) for s in m.seeds.train}
        minade = next((k.label for k in m.metric_kinds() if k.name == MetricName.MIN_ADE), None)
        summary["acceptance"] = evaluate_acceptance(gap_rows, insert_rows, agreement_stats, robust_rows,
                                                    m.variants, minade)
        artifacts.append(_write_json(report_dir / "summary.json", summary))
        return self._finish("report", artifacts, start,
                            {"tables": [p.name for p in artifacts],
                             "nll_gaps": [r for r in gaps if r["metric"] == "nll"],
                             "acceptance": {k: v["status"] for k, v in summary["acceptance"].items()}})


def _tag(rows: List[Dict[str, str]], **extra: Any) -> List[Dict[str, Any]]:
    return [{**row, **{k: str(v) for k, v in extra.items()}} for row in rows]


def _stat_fields(names: Sequence[str]) -> List[str]:
    return [f"{n}_{stat}" for n in names for stat in ("mean", "std")]


def _aggregate(rows: List[Dict[str, Any]], keys: Sequence[str], values: Sequence[str]) -> List[Dict[str, Any]]:
    """按 keys 分组，对 values 求跨种子的均值 ± 标准差（保持首次出现的分组顺序）"""
    groups: Dict[Tuple, List[Dict[str, Any]]] = defaultdict(list)
    for row in rows:
        groups[tuple(row[k] for k in keys)].append(row)
    out = []
    for group_key, members in groups.items():
        entry: Dict[str, Any] = dict(zip(keys, group_key))
        for name in values:
            stats = _mean_std([float(r[name]) for r in members])
            entry[f"{name}_mean"] = stats["mean"]
            entry[f"{name}_std"] = stats["std"]
        entry["n_seeds"] = len(members)
        out.append(entry)
    return out


def format_stage_result(result: StageResult) -> str:
    """阶段结果的多行文本摘要（CLI 与 MCP 工具共用）"""
    lines = [f"✅ 阶段 {result.stage} 完成 ({result.seconds:.1f}s)", "=" * 40]
    for path in result.artifacts:
        lines.append(f"📄 {path}")
    if result.summary:
        lines.append("")
        lines.append("📌 摘要:")
        lines.append(json.dumps(result.summary, ensure_ascii=False, indent=2, sort_keys=True, default=str))
    return "\n".join(lines)
