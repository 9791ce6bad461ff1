"""
工具函数模块
============

包含校验和、JSON-lines/CSV 读写、扁平键值配置解析、随机种子派生与并行映射等辅助函数。
"""

import csv
import enum
import hashlib
import io
import json
import math
import dataclasses
import typing
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Type, TypeVar

import numpy as np
from dotenv import dotenv_values
from joblib import Parallel, delayed

from .config import logger
from .errors import ConfigError

T = TypeVar("T")


# ============================================================
# 校验和与序列化
# ============================================================


def _sha256_bytes(data: bytes) -> str:
    """计算字节串的 SHA-256 十六进制摘要"""
    return hashlib.sha256(data).hexdigest()


def _sha256_file(path: Path) -> str:
    """计算文件内容的 SHA-256 十六进制摘要"""
    return _sha256_bytes(Path(path).read_bytes())


def _to_jsonable(obj: Any) -> Any:
    """
    把 dataclass / Enum / numpy 值转换成可 JSON 序列化的结构

    Args:
        obj: 任意对象

    Returns:
        只包含 dict/list/str/int/float/bool/None 的结构
    """
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_to_jsonable(v) for v in obj)
    return obj


def _fixed_digits_json(obj: Any, digits: int) -> str:
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"Out of range float values are not JSON compliant: {obj!r}")
        text = format(obj, f".{digits}g")
        return text if ("." in text or "e" in text) else text + ".0"
    if isinstance(obj, dict):
        items = (f"{json.dumps(k)}:{_fixed_digits_json(v, digits)}" for k, v in sorted(obj.items()))
        return "{" + ",".join(items) + "}"
    if isinstance(obj, list):
        return "[" + ",".join(_fixed_digits_json(v, digits) for v in obj) + "]"
    return json.dumps(obj)


def _canonical_json(obj: Any, float_digits: Optional[int] = None) -> str:
    """
    键排序、无多余空白的 JSON 文本

    浮点数默认用 repr（最短往返表示）；给定 float_digits 时固定写出该位数的有效数字，
    17 位同样逐位往返。
    """
    if float_digits is not None:
        return _fixed_digits_json(_to_jsonable(obj), float_digits)
    return json.dumps(_to_jsonable(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def _write_text(path: Path, text: str) -> Path:
    """以 UTF-8、LF 换行写文件"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def _write_json(path: Path, obj: Any) -> Path:
    """写出带缩进的规范 JSON 文件"""
    text = json.dumps(_to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)
    return _write_text(path, text + "\n")


def _write_jsonl(path: Path, records: Iterable[Any], float_digits: Optional[int] = None) -> Path:
    """写出 JSON-lines 文件，每行一条规范 JSON 记录"""
    lines = [_canonical_json(r, float_digits) for r in records]
    return _write_text(path, "".join(line + "\n" for line in lines))


def _read_jsonl(path: Path) -> List[Dict[str, Any]]:
    """读取 JSON-lines 文件"""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _write_csv(
    path: Path,
    fieldnames: List[str],
    rows: List[Dict[str, Any]],
    metadata: Optional[Dict[str, Any]] = None
) -> Path:
    """
    写出带 `#` 元数据头的 CSV 文件

    Args:
        path: 输出路径
        fieldnames: 列名
        rows: 行数据
        metadata: 写在表头之前的 `# key: value` 元数据

    Returns:
        输出路径
    """
    buf = io.StringIO()
    for key, value in (metadata or {}).items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _format_cell(row.get(k)) for k in fieldnames})
    return _write_text(path, buf.getvalue())


def _format_cell(value: Any) -> Any:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, enum.Enum):
        return value.value
    return "" if value is None else value


def _read_csv(path: Path) -> List[Dict[str, str]]:
    """读取 CSV 文件，跳过 `#` 元数据行"""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


# ============================================================
# 扁平键值配置
# ============================================================


def _load_flat_file(path: Path) -> Dict[str, str]:
    """
    用 dotenv 解析扁平键值文件

    Args:
        path: 文件路径

    Returns:
        键到原始字符串值的映射

    Raises:
        ConfigError: 文件不存在或存在没有值的键
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"配置文件不存在: {path}")
    values = dotenv_values(path)
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise ConfigError(f"{path}: 以下键缺少值: {', '.join(missing)}")
    return {k: v for k, v in values.items()}


def _parse_scalar(raw: str, tp: Any, key: str) -> Any:
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.strip().lower() in ("", "none", "null"):
            return None
        return _parse_scalar(raw, args[0], key)
    if origin in (list, List, tuple):
        (item_tp, *_) = typing.get_args(tp) or (str,)
        items = [s.strip() for s in raw.split(",") if s.strip()]
        parsed = [_parse_scalar(s, item_tp, key) for s in items]
        return tuple(parsed) if origin is tuple else parsed
    try:
        if tp is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw.strip())
        if tp is float:
            return float(raw.strip())
        if isinstance(tp, type) and issubclass(tp, enum.Enum):
            return tp(raw.strip().lower())
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"键 {key!r} 的值 {raw!r} 无法解析为 {getattr(tp, '__name__', tp)}") from exc


def _parse_dataclass(cls: Type[T], values: Dict[str, str], prefix: str = "") -> T:
    """
    把扁平键值映射解析成 dataclass 实例

    只消费以 prefix 开头的键；未出现的字段取 dataclass 默认值。

    Args:
        cls: 目标 dataclass 类型
        values: 原始键值映射
        prefix: 键前缀，如 "gen."

    Returns:
        cls 的实例
    """
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if not f.init:
            continue
        key = prefix + f.name
        if key in values:
            kwargs[f.name] = _parse_scalar(values[key], hints[f.name], key)
    return cls(**kwargs)


def _reject_unknown_keys(values: Dict[str, str], known: Iterable[str], source: str) -> None:
    """存在未知键时抛出 ConfigError"""
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"{source}: 未知的配置键: {', '.join(unknown)}")


def _dataclass_keys(cls: type, prefix: str = "") -> List[str]:
    """列出 dataclass 的全部可配置键"""
    return [prefix + f.name for f in dataclasses.fields(cls) if f.init]


# ============================================================
# 随机数与并行
# ============================================================


def _rng(*keys: int) -> np.random.Generator:
    """
    由整数键序列派生独立的随机数生成器

    相同的键永远得到相同的随机流，与调用顺序、进程和线程数无关。
    """
    return np.random.default_rng([int(k) for k in keys])


def _parallel_map(fn: Callable[..., T], items: Sequence[Any], workers: int = 1) -> List[T]:
    """
    按顺序返回 fn(item) 的结果列表

    workers > 1 时用 joblib 分发到多个进程；结果顺序与输入一致，因此与 worker 数无关。
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug(f"并行执行 {len(items)} 个任务，workers={workers}")
    return list(Parallel(n_jobs=workers)(delayed(fn)(item) for item in items))


def _mean_std(values: Sequence[float]) -> Dict[str, float]:
    """均值与样本标准差（少于两个值时标准差为 0）"""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {"mean": float("nan"), "std": float("nan")}
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std}


def _exact_mean(values: Iterable[float]) -> float:
    """与求和顺序无关的均值（math.fsum 正确舍入）"""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("空序列没有均值")
    return math.fsum(values) / len(values)
