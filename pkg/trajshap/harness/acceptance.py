"""
验收检查
========

report 阶段在跨种子汇总之后逐条核对实验应当呈现的方向性结论，每条给出
status（pass / fail / skipped）与用于判断的数值，写进 summary.json 的 acceptance 块。
检查失败不会让阶段失败，只记录并打警告日志。

输入都是各阶段 CSV 读回的逐种子行（字段值为字符串）。
"""

import math
from collections import defaultdict
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from ..config import logger

PASS = "pass"
FAIL = "fail"
SKIPPED = "skipped"

# 逐种子方向一致的最低比例（5 个种子中至少 4 个）
SIGN_CONSISTENCY = 0.8
# U 形谷底相对端点的最小深度，以跨种子标准误计
DIP_STANDARD_ERRORS = 3.0
# NonCausal 直方图不应被拒绝的显著性水平
AGREEMENT_ALPHA = 0.01


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


def _skipped(reason: str) -> Dict[str, Any]:
    return {"status": SKIPPED, "reason": reason}


def _values(rows: Sequence[Mapping[str, Any]], field: str, **match: str) -> List[float]:
    return [float(r[field]) for r in rows if all(str(r[k]) == v for k, v in match.items())]


def required_seeds(n_seeds: int) -> int:
    return int(math.ceil(SIGN_CONSISTENCY * n_seeds - 1e-9))


# ============================================================
# 单条检查
# ============================================================


def check_gap_signs(gap_rows: Sequence[Mapping[str, Any]], variant: str = "baseline") -> Dict[str, Any]:
    """NLL 上 Super 优于 All（Δ_Super-All < 0），去掉全部智能体变差（Δ_No-All > 0）"""
    super_all = _values(gap_rows, "delta_super_all", variant=variant, metric="nll")
    no_all = _values(gap_rows, "delta_no_all", variant=variant, metric="nll")
    if not super_all:
        return _skipped(f"缺少 {variant} 的 NLL 差距")
    n = len(super_all)
    need = required_seeds(n)
    super_better = sum(1 for d in super_all if d < 0)
    none_worse = sum(1 for d in no_all if d > 0)
    mean_super_all, mean_no_all = float(np.mean(super_all)), float(np.mean(no_all))
    ok = mean_super_all < 0 and mean_no_all > 0 and super_better >= need and none_worse >= need
    return {
        "status": _status(ok), "variant": variant,
        "mean_delta_super_all": mean_super_all, "mean_delta_no_all": mean_no_all,
        "seeds_super_better": super_better, "seeds_none_worse": none_worse,
        "n_seeds": n, "required_seeds": need,
    }


def check_cib_gap_shrinkage(gap_rows: Sequence[Mapping[str, Any]], metric_label: Optional[str]) -> Dict[str, Any]:
    """CIB 变体的 |Δ^minADE_Super-All| 不大于基线"""
    if metric_label is None:
        return _skipped("清单中没有 minade 指标")
    baseline = _values(gap_rows, "delta_super_all", variant="baseline", metric=metric_label)
    cib = _values(gap_rows, "delta_super_all", variant="cib", metric=metric_label)
    if not baseline or not cib:
        return _skipped("需要 baseline 与 cib 两个变体")
    baseline_gap, cib_gap = abs(float(np.mean(baseline))), abs(float(np.mean(cib)))
    return {"status": _status(cib_gap <= baseline_gap), "metric": metric_label,
            "baseline_abs_gap": baseline_gap, "cib_abs_gap": cib_gap}


def _curve_dip(rows: Sequence[Mapping[str, Any]], variant: str, split: str) -> Optional[Dict[str, float]]:
    by_fraction: Dict[float, List[float]] = defaultdict(list)
    for r in rows:
        if r["variant"] == variant and r["direction"] == "insertion" and r["split"] == split:
            by_fraction[float(r["fraction"])].append(float(r["value"]))
    if len(by_fraction) < 2:
        return None
    fractions = sorted(by_fraction)
    means = np.array([np.mean(by_fraction[f]) for f in fractions])
    lowest = int(np.argmin(means))
    samples = by_fraction[fractions[lowest]]
    se = float(np.std(samples, ddof=1) / math.sqrt(len(samples))) if len(samples) > 1 else 0.0
    return {"dip": float(min(means[0], means[-1]) - means[lowest]), "standard_error": se,
            "min_fraction": fractions[lowest]}


def check_insertion_u_shape(insert_rows: Sequence[Mapping[str, Any]], variant: str = "baseline") -> Dict[str, Any]:
    """验证集插入曲线的谷底比两端低至少 3 个标准误，且比训练集更深"""
    val = _curve_dip(insert_rows, variant, "validation")
    if val is None:
        return _skipped(f"缺少 {variant} 的验证集插入曲线")
    u_shape = val["dip"] > 0 and val["dip"] >= DIP_STANDARD_ERRORS * val["standard_error"]
    result: Dict[str, Any] = {"variant": variant, "validation_dip": val["dip"],
                              "validation_standard_error": val["standard_error"],
                              "min_fraction": val["min_fraction"], "u_shape": u_shape}
    train = _curve_dip(insert_rows, variant, "train")
    if train is None:
        result["deeper_on_validation"] = None
        result["status"] = _status(u_shape)
    else:
        result["train_dip"] = train["dip"]
        result["deeper_on_validation"] = val["dip"] > train["dip"]
        result["status"] = _status(u_shape and result["deeper_on_validation"])
    return result


def check_agreement_structure(agreement_stats: Mapping[str, Mapping[str, Mapping[str, Any]]]) -> Dict[str, Any]:
    """CIB 模型内一致率的极端质量高于模型间；基线 NonCausal 直方图不被二项基线拒绝"""
    cib = agreement_stats.get("cib", {})
    baseline = agreement_stats.get("baseline", {})
    if "intra_model.all" not in cib or "inter_model.all" not in cib:
        return _skipped("需要 cib 变体的模型内与模型间一致率")
    intra, inter = cib["intra_model.all"]["extreme_mass"], cib["inter_model.all"]["extreme_mass"]
    result: Dict[str, Any] = {"intra_extreme_mass": intra, "inter_extreme_mass": inter,
                              "intra_more_extreme": intra > inter}
    noncausal = baseline.get("inter_model.noncausal")
    if noncausal is None or noncausal["total"] == 0:
        result["noncausal_p_value"] = None
        result["status"] = _status(result["intra_more_extreme"])
        return result
    result["noncausal_p_value"] = noncausal["p_value"]
    result["noncausal_not_rejected"] = noncausal["p_value"] >= AGREEMENT_ALPHA
    result["status"] = _status(result["intra_more_extreme"] and result["noncausal_not_rejected"])
    return result


def check_robustness_orderings(robust_rows: Sequence[Mapping[str, Any]], variants: Sequence[str]) -> Dict[str, Any]:
    """噪声下 CIB 的 %Abs(Δ) 不高于基线；两个变体都对移除 Causal 比移除 NonCausal 更敏感"""
    if not robust_rows:
        return _skipped("缺少鲁棒性结果")
    checks: Dict[str, bool] = {}
    details: Dict[str, Any] = {}
    if "baseline" in variants and "cib" in variants:
        sigmas = sorted({r["sigma"] for r in robust_rows if r["perturbation"] == "gaussian_noise"}, key=float)
        for sigma in sigmas:
            base = _values(robust_rows, "percent_abs_delta", variant="baseline", perturbation="gaussian_noise",
                           sigma=sigma)
            cib = _values(robust_rows, "percent_abs_delta", variant="cib", perturbation="gaussian_noise", sigma=sigma)
            key = f"noise_{sigma}"
            details[key] = {"baseline_percent_abs_delta": float(np.mean(base)),
                            "cib_percent_abs_delta": float(np.mean(cib))}
            checks[key] = details[key]["cib_percent_abs_delta"] <= details[key]["baseline_percent_abs_delta"]
    for variant in variants:
        causal = _values(robust_rows, "abs_delta", variant=variant, perturbation="remove_causal")
        noncausal = _values(robust_rows, "abs_delta", variant=variant, perturbation="remove_noncausal")
        if not causal or not noncausal:
            continue
        key = f"removal_{variant}"
        details[key] = {"remove_causal_abs_delta": float(np.mean(causal)),
                        "remove_noncausal_abs_delta": float(np.mean(noncausal))}
        checks[key] = details[key]["remove_causal_abs_delta"] > details[key]["remove_noncausal_abs_delta"]
    if not checks:
        return _skipped("没有可比较的扰动")
    return {"status": _status(all(checks.values())), "checks": checks, **details}


# ============================================================
# 汇总
# ============================================================


def evaluate_acceptance(
    gap_rows: Sequence[Mapping[str, Any]],
    insert_rows: Sequence[Mapping[str, Any]],
    agreement_stats: Mapping[str, Mapping[str, Mapping[str, Any]]],
    robust_rows: Sequence[Mapping[str, Any]],
    variants: Sequence[str],
    minade_label: Optional[str] = None,
) -> Dict[str, Dict[str, Any]]:
    """
    逐条核对方向性结论

    Returns:
        {检查名: {"status": ..., 数值...}}，键顺序固定
    """
    results = {
        "gap_signs": check_gap_signs(gap_rows),
        "cib_gap_shrinkage": check_cib_gap_shrinkage(gap_rows, minade_label),
        "insertion_u_shape": check_insertion_u_shape(insert_rows),
        "agreement_structure": check_agreement_structure(agreement_stats),
        "robustness_orderings": check_robustness_orderings(robust_rows, variants),
    }
    for name, result in results.items():
        if result["status"] == FAIL:
            logger.warning(f"验收检查未通过: {name}")
    return results
