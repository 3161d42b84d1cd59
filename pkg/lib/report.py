#!/usr/bin/env python3
"""
Report
- 基线 / 加速度更新两种模式的终值 σ 对比与改善百分比
- 收敛时间 (达到基线终值精度并保持到结束)
- RMSE 扫描汇总
- Markdown / JSON 输出
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from lib.ekf import STATE_LABELS
from lib.frames import DEG_PER_HOUR, MILLI_G, MILLIRAD
from lib.simulation import EnsembleResult

logger = logging.getLogger(__name__)

# 对比表只列姿态与零偏 (速度误差直接被量测约束)
REPORT_STATES = STATE_LABELS[3:]
MISSING = "—"

DISPLAY_UNITS: Dict[str, Tuple[str, float]] = {
    "dv": ("m/s", 1.0),
    "phi": ("mrad", MILLIRAD),
    "ba": ("mg", MILLI_G),
    "bg": ("deg/h", DEG_PER_HOUR),
}


def display_unit(label: str) -> Tuple[str, float]:
    """状态标签 → (显示单位, SI 换算因子)"""
    return DISPLAY_UNITS[label.split("_")[0]]


def convergence_time(time: Sequence[float], sigma: Sequence[float],
                     level: float) -> Optional[float]:
    """
    σ 首次降到 level 以下并保持到结束的时刻

    Args:
        time: 历元时刻
        sigma: 本方法的 σ 序列
        level: 基线在结束时刻的 σ

    Returns:
        相对首个历元的时间 (s); 从未达到或首个历元已满足时返回 None
    """
    t = np.asarray(time, dtype=float)
    s = np.asarray(sigma, dtype=float)
    if t.size == 0:
        raise ValueError("σ 序列为空")
    ok = s <= level
    if not ok[-1]:
        return None
    bad = np.flatnonzero(~ok)
    if bad.size == 0:
        return None
    return float(t[bad[-1] + 1] - t[0])


def improvement_pct(base: float, ours: float) -> float:
    if base <= 0:
        return 0.0
    return 100.0 * (base - ours) / base


@dataclass
class StateRow:
    state: str
    unit: str
    sigma_baseline: float
    sigma_accel: Optional[float] = None
    improvement: Optional[float] = None
    convergence: Optional[float] = None
    convergence_improvement: Optional[float] = None
    unobservable: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "state": self.state,
            "unit": self.unit,
            "sigma_baseline": self.sigma_baseline,
            "sigma_accel": self.sigma_accel,
            "improvement_pct": self.improvement,
            "convergence_s": self.convergence,
            "convergence_improvement_pct": self.convergence_improvement,
            "unobservable": self.unobservable,
        }


@dataclass
class ComparisonReport:
    name: str
    duration: float
    rows: List[StateRow]
    average_policy: str = "exclude"
    average_improvement: Optional[float] = None
    average_convergence_improvement: Optional[float] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def has_comparison(self) -> bool:
        return any(r.sigma_accel is not None for r in self.rows)

    def footer(self) -> List[str]:
        lines = []
        if self.has_comparison:
            if self.average_policy == "exclude":
                unobs = ", ".join(r.state for r in self.rows if r.unobservable) or "无"
                lines.append(f"平均值不含不可观状态 ({unobs}) 及未收敛 ({MISSING}) 行")
            else:
                lines.append(f"平均值包含全部状态, 未收敛 ({MISSING}) 行按 0 计入")
            lines.append("改善 = (σ_baseline - σ_accel) / σ_baseline; "
                         "收敛改善 = (T_end - t) / T_end")
        lines.extend(f"警告: {w}" for w in self.warnings)
        return lines

    def to_markdown(self) -> str:
        def num(x: Optional[float], fmt: str) -> str:
            return MISSING if x is None else format(x, fmt)

        out = [f"# {self.name}", "", f"T_end = {self.duration:.1f} s", ""]
        if self.has_comparison:
            out.append("| State | Unit | Baseline σ | Accel σ | Improvement | "
                       "Convergence [s] | Conv. improvement |")
            out.append("|---|---|---|---|---|---|---|")
            for r in self.rows:
                out.append(
                    f"| {r.state} | {r.unit} | {r.sigma_baseline:.4g} | {num(r.sigma_accel, '.4g')} "
                    f"| {num(r.improvement, '.2f')}% | {num(r.convergence, '.0f')} "
                    f"| {num(r.convergence_improvement, '.2f')}"
                    f"{'' if r.convergence_improvement is None else '%'} |"
                )
            out.append(f"| **Average** | | | | {num(self.average_improvement, '.2f')}% | "
                       f"| {num(self.average_convergence_improvement, '.2f')}% |")
        else:
            out.append("| State | Unit | Baseline σ |")
            out.append("|---|---|---|")
            for r in self.rows:
                out.append(f"| {r.state} | {r.unit} | {r.sigma_baseline:.4g} |")
        footer = self.footer()
        if footer:
            out.append("")
            out.extend(f"- {line}" for line in footer)
        return "\n".join(out) + "\n"

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "name": self.name,
            "duration": self.duration,
            "rows": [r.to_dict() for r in self.rows],
            "warnings": list(self.warnings),
        }
        if self.has_comparison:
            data["average_policy"] = self.average_policy
            data["average_improvement_pct"] = self.average_improvement
            data["average_convergence_improvement_pct"] = self.average_convergence_improvement
        return data


def _average(values: List[Optional[float]], policy: str) -> Optional[float]:
    if policy == "include_zero":
        vals = [0.0 if v is None else v for v in values]
    else:
        vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def divergence_warnings(results: Sequence[EnsembleResult], fraction: float) -> List[str]:
    warnings = []
    for res in results:
        total = res.n_runs + len(res.diverged)
        if total and len(res.diverged) / total > fraction:
            msg = (f"{res.mode.value} 模式 {len(res.diverged)}/{total} 次运行发散 "
                   f"(超过 {fraction:.0%})")
            logger.warning(msg)
            warnings.append(msg)
    return warnings


def build_comparison(name: str, baseline: EnsembleResult,
                     accel: Optional[EnsembleResult] = None,
                     average_policy: str = "exclude",
                     unobservable_states: Sequence[str] = ("phi_d", "bg_z"),
                     divergence_warning_fraction: float = 0.1) -> ComparisonReport:
    """
    由两组集合结果构建对比报告 (使用滤波估计 σ)

    Args:
        name: 报告标题
        baseline: 仅速度更新的集合结果
        accel: 速度 + 加速度更新的集合结果, 为空时仅输出基线列
        average_policy: exclude | include_zero
        unobservable_states: 平均时排除的状态
        divergence_warning_fraction: 发散比例警告阈值

    Returns:
        ComparisonReport
    """
    if accel is not None and not np.array_equal(baseline.time, accel.time):
        raise ValueError("两种模式的历元时刻不一致")
    time = baseline.time
    duration = float(time[-1] - time[0])
    rows = []
    for label in REPORT_STATES:
        i = STATE_LABELS.index(label)
        unit, scale = display_unit(label)
        base_final = float(baseline.est_sigma[-1, i])
        row = StateRow(state=label, unit=unit, sigma_baseline=base_final / scale,
                       unobservable=label in unobservable_states)
        if accel is not None:
            ours = accel.est_sigma[:, i]
            row.sigma_accel = float(ours[-1]) / scale
            row.improvement = improvement_pct(base_final, float(ours[-1]))
            t_conv = convergence_time(time, ours, base_final)
            row.convergence = t_conv
            if t_conv is not None and duration > 0:
                row.convergence_improvement = 100.0 * (duration - t_conv) / duration
        rows.append(row)

    report = ComparisonReport(name=name, duration=duration, rows=rows,
                              average_policy=average_policy)
    if accel is not None:
        if average_policy == "exclude":
            kept = [r for r in rows if not r.unobservable]
        else:
            kept = rows
        report.average_improvement = _average([r.improvement for r in kept], average_policy)
        report.average_convergence_improvement = _average(
            [r.convergence_improvement for r in kept], average_policy)
    results = [baseline] if accel is None else [baseline, accel]
    report.warnings = divergence_warnings(results, divergence_warning_fraction)
    return report


@dataclass
class RmseSummary:
    frame: pd.DataFrame
    best_n: int
    best_rmse: float
    decreasing_prefix: int      # 从第一个 n 开始严格下降的点数

    @property
    def decreases_then_increases(self) -> bool:
        return 1 < self.decreasing_prefix < len(self.frame)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "best_n": self.best_n,
            "best_rmse": self.best_rmse,
            "decreasing_prefix": self.decreasing_prefix,
            "decreases_then_increases": self.decreases_then_increases,
        }


def rmse_report(curve: Sequence[Tuple[int, float]]) -> RmseSummary:
    """RMSE 曲线 → CSV 表 + 最优窗口 (并列时取较小 n)"""
    if not curve:
        raise ValueError("RMSE 曲线为空")
    frame = pd.DataFrame(sorted(curve), columns=["n", "rmse"])
    rmse = frame["rmse"].to_numpy()
    best = int(np.argmin(rmse))           # argmin 返回第一个最小值
    prefix = 1
    while prefix < len(rmse) and rmse[prefix] < rmse[prefix - 1]:
        prefix += 1
    summary = RmseSummary(frame=frame, best_n=int(frame["n"].iloc[best]),
                          best_rmse=float(rmse[best]), decreasing_prefix=prefix)
    logger.info(f"RMSE 最优窗口 n={summary.best_n}, RMSE={summary.best_rmse:.5f} m/s²")
    return summary
