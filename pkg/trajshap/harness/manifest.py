"""
实验清单与运行记录
==================

实验清单是扁平的 `section.key=value` 文本文件（用 dotenv 解析），运行记录保存每个阶段的产物校验和与耗时。
"""

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

from ..config import logger, DEFAULT_BETA_GRID, MANIFEST_FORMAT_VERSION, N_EXACT_MAX, TOOLKIT_VERSION
from ..core.attribution import EstimatorKind
from ..core.metrics import MetricKind
from ..core.predictor import OptimizerConfig, PredictorConfig
from ..core.scene import GeneratorConfig, Split
from ..errors import ConfigError, ManifestDriftError
from ..utils import (
    _canonical_json, _dataclass_keys, _load_flat_file, _parse_dataclass, _parse_scalar,
    _reject_unknown_keys, _sha256_bytes, _sha256_file, _write_json
)


# ============================================================
# 清单各节
# ============================================================


class BetaMode(str, Enum):
    """β 的来源：固定值、全局扫描（首个训练种子选出后所有种子共用）或逐种子扫描"""

    FIXED = "fixed"
    SWEEP = "sweep"
    SWEEP_PER_SEED = "sweep_per_seed"


@dataclass
class DatasetSection:
    """gen.* 中不属于 GeneratorConfig 的键"""

    val_fraction: float = 0.5


@dataclass
class ModelSection:
    d_model: int = 32
    K: int = 6
    n_heads: int = 4
    sigma_min: float = 0.1
    d_z: Optional[int] = None


@dataclass
class CIBSection:
    enabled: bool = True
    beta: float = 1.0
    beta_mode: BetaMode = BetaMode.FIXED
    beta_grid: List[float] = field(default_factory=lambda: list(DEFAULT_BETA_GRID))


@dataclass
class SeedSection:
    data: int = 7
    train: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    inference: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    attr: int = 0
    noise: int = 0


@dataclass
class MetricsSection:
    names: List[str] = field(default_factory=lambda: ["nll", "minade", "minfde", "missrate"])
    miss_threshold: float = 2.0


@dataclass
class AttrSection:
    estimator: EstimatorKind = EstimatorKind.AUTO
    permutations: int = 2000
    n_exact_max: int = N_EXACT_MAX
    max_scenes: Optional[int] = None
    dummy_scenes: int = 20


@dataclass
class AnalysisSection:
    insertion_steps: int = 10
    train_split: bool = True


@dataclass
class RobustSection:
    sigmas: List[float] = field(default_factory=lambda: [0.2, 0.4])
    metric: str = "minade"
    include_target: bool = False


# 清单键前缀 → 节
_SECTIONS = {
    "model.": ModelSection,
    "opt.": OptimizerConfig,
    "cib.": CIBSection,
    "seeds.": SeedSection,
    "metrics.": MetricsSection,
    "attr.": AttrSection,
    "analysis.": AnalysisSection,
    "robust.": RobustSection,
}


@dataclass
class ExperimentManifest:
    """
    一次可复现实验的全部配置

    checksum 只覆盖实验语义（不含输出目录）。
    """

    format_version: int = MANIFEST_FORMAT_VERSION
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    opt: OptimizerConfig = field(default_factory=OptimizerConfig)
    cib: CIBSection = field(default_factory=CIBSection)
    seeds: SeedSection = field(default_factory=SeedSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    attr: AttrSection = field(default_factory=AttrSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    robust: RobustSection = field(default_factory=RobustSection)
    out_dir: Optional[str] = None
    source: Optional[str] = None

    def validate(self) -> "ExperimentManifest":
        problems = []
        if self.format_version != MANIFEST_FORMAT_VERSION:
            problems.append(f"format_version={self.format_version} 不受支持（需要 {MANIFEST_FORMAT_VERSION}）")
        if not self.seeds.train:
            problems.append("seeds.train 不能为空")
        if len(set(self.seeds.train)) != len(self.seeds.train):
            problems.append("seeds.train 不能重复")
        if len(set(self.seeds.inference)) != len(self.seeds.inference):
            problems.append("seeds.inference 不能重复")
        if self.cib.enabled and self.cib.beta_mode != BetaMode.FIXED and not self.cib.beta_grid:
            problems.append(f"cib.beta_mode={self.cib.beta_mode.value} 时 cib.beta_grid 不能为空")
        if any(b < 0 for b in self.cib.beta_grid) or self.cib.beta < 0:
            problems.append("β 必须 ≥ 0")
        if not 0.0 < self.dataset.val_fraction <= 10.0:
            problems.append("gen.val_fraction 必须位于 (0, 10]")
        if self.attr.permutations < 1:
            problems.append("attr.permutations 必须 ≥ 1")
        if self.analysis.insertion_steps < 1:
            problems.append("analysis.insertion_steps 必须 ≥ 1")
        if any(s <= 0 for s in self.robust.sigmas):
            problems.append("robust.sigmas 必须全部 > 0")
        try:
            kinds = self.metric_kinds()
            MetricKind.parse(self.robust.metric)
        except Exception as exc:
            problems.append(str(exc))
        else:
            if not any(k.is_nll for k in kinds):
                problems.append("metrics.names 必须包含 nll（Super Agent 由 NLL 定义）")
            if any(k.k is not None and k.k > self.model.K for k in kinds):
                problems.append("指标的 K' 不能超过 model.K")
        if problems:
            raise ConfigError("实验清单无效: " + "; ".join(problems))
        self.gen.validate()
        self.opt.validate()
        self.predictor_config(False, 0.0, 0).validate()
        return self

    # ------------------------------------------------------------
    # 派生配置
    # ------------------------------------------------------------

    def metric_kinds(self) -> List[MetricKind]:
        kinds = []
        for name in self.metrics.names:
            kind = MetricKind.parse(name)
            if kind.name.value == "missrate" and ":" not in name:
                kind = MetricKind.miss_rate(kind.k, self.metrics.miss_threshold)
            kinds.append(kind)
        return kinds

    def robust_metric(self) -> MetricKind:
        return MetricKind.parse(self.robust.metric)

    @property
    def variants(self) -> List[str]:
        return ["baseline", "cib"] if self.cib.enabled else ["baseline"]

    def generator_config(self, split: Split) -> GeneratorConfig:
        if split == Split.TRAIN:
            return dataclasses.replace(self.gen, split=Split.TRAIN)
        frac = self.dataset.val_fraction
        return dataclasses.replace(
            self.gen, split=Split.VALIDATION,
            n_leader_follower=round(self.gen.n_leader_follower * frac),
            n_independent=round(self.gen.n_independent * frac),
            n_spurious=round(self.gen.n_spurious * frac),
            n_mixed=round(self.gen.n_mixed * frac),
        )

    def predictor_config(self, use_cib: bool, beta: float, seed: int) -> PredictorConfig:
        return PredictorConfig(
            d_model=self.model.d_model, K=self.model.K, H=self.gen.history_steps, F=self.gen.future_steps,
            n_heads=self.model.n_heads, use_cib=use_cib, beta=beta if use_cib else 0.0, seed=seed,
            dt=self.gen.dt, sigma_min=self.model.sigma_min, d_z=self.model.d_z,
        )

    # ------------------------------------------------------------
    # 校验和
    # ------------------------------------------------------------

    def semantic_dict(self) -> Dict:
        d = asdict(self)
        d.pop("out_dir")
        d.pop("source")
        return d

    @property
    def checksum(self) -> str:
        return _sha256_bytes(_canonical_json(self.semantic_dict()).encode("utf-8"))

    @property
    def short_checksum(self) -> str:
        return self.checksum[:12]


def manifest_keys() -> List[str]:
    """清单中全部合法的键"""
    keys = ["format_version", "out_dir"]
    keys += [k for k in _dataclass_keys(GeneratorConfig, "gen.") if k != "gen.split"]
    keys += _dataclass_keys(DatasetSection, "gen.")
    for prefix, cls in _SECTIONS.items():
        keys += _dataclass_keys(cls, prefix)
    return keys


def load_manifest(path: Path) -> ExperimentManifest:
    """
    读取并校验实验清单

    Args:
        path: 清单文件路径

    Returns:
        ExperimentManifest

    Raises:
        ConfigError: 文件不存在、未知键、值无法解析或语义无效
    """
    path = Path(path)
    values = _load_flat_file(path)
    _reject_unknown_keys(values, manifest_keys(), str(path))
    kwargs = {
        "gen": _parse_dataclass(GeneratorConfig, {k: v for k, v in values.items() if k != "gen.split"}, "gen."),
        "dataset": _parse_dataclass(DatasetSection, values, "gen."),
    }
    for prefix, cls in _SECTIONS.items():
        kwargs[prefix.rstrip(".")] = _parse_dataclass(cls, values, prefix)
    if "format_version" in values:
        kwargs["format_version"] = _parse_scalar(values["format_version"], int, "format_version")
    if "out_dir" in values:
        kwargs["out_dir"] = values["out_dir"].strip()
    manifest = ExperimentManifest(**kwargs, source=str(path)).validate()
    logger.info(f"已加载实验清单 {path} (checksum={manifest.short_checksum})")
    return manifest


# ============================================================
# 运行记录
# ============================================================


@dataclass
class StageRecord:
    artifacts: Dict[str, str] = field(default_factory=dict)
    seconds: float = 0.0


@dataclass
class RunRecord:
    """
    运行记录

    artifacts 是 相对路径 → sha256；每个被引用的产物都必须存在且校验和一致。
    """

    manifest_checksum: str
    toolkit_version: str = TOOLKIT_VERSION
    stages: Dict[str, StageRecord] = field(default_factory=dict)

    FILENAME = "run_record.json"

    @classmethod
    def load_or_create(cls, run_dir: Path, manifest: ExperimentManifest) -> "RunRecord":
        path = Path(run_dir) / cls.FILENAME
        if not path.is_file():
            return cls(manifest_checksum=manifest.checksum)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
            record = cls(
                manifest_checksum=doc["manifest_checksum"],
                toolkit_version=doc.get("toolkit_version", TOOLKIT_VERSION),
                stages={name: StageRecord(**s) for name, s in doc.get("stages", {}).items()},
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise ManifestDriftError(f"运行记录 {path} 无法解析: {exc}") from exc
        return record

    def save(self, run_dir: Path) -> Path:
        return _write_json(Path(run_dir) / self.FILENAME, asdict(self))

    def record_stage(self, stage: str, run_dir: Path, artifacts: List[Path], seconds: float) -> StageRecord:
        run_dir = Path(run_dir)
        entry = StageRecord(
            artifacts={str(p.relative_to(run_dir).as_posix()): _sha256_file(p) for p in sorted(artifacts)},
            seconds=round(seconds, 3),
        )
        self.stages[stage] = entry
        return entry

    def verify_stage(self, stage: str, run_dir: Path) -> Optional[str]:
        """
        检查某阶段的产物

        Returns:
            None 表示完好；"missing" 表示缺失；否则为校验和不一致的产物路径
        """
        entry = self.stages.get(stage)
        if entry is None:
            return "missing"
        for rel, digest in entry.artifacts.items():
            path = Path(run_dir) / rel
            if not path.is_file():
                return "missing"
            if _sha256_file(path) != digest:
                return rel
        return None
