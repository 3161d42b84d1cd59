#!/usr/bin/env python3
"""
INS/DVL 实验入口

子命令:
  simulate       生成真值与一次传感器实现 (truth / imu / dvl CSV)
  fuse           单次融合运行, 输出误差与 σ 序列
  montecarlo     Monte Carlo 集合 + 对比报告
  observability  Gramian 零空间与解析不可观子空间比较
  rmse-sweep     加速度 RMSE 随窗口长度变化
  compare        由已有集合 CSV 重新生成对比报告

退出码: 0 成功, 1 运行失败, 2 配置或文件错误
"""

import argparse
import json
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import List, Optional

import numpy as np
import pandas as pd

# 添加 lib 到 path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from lib.artifact_store import load_csv, record_run, save_csv, write_json, write_text
from lib.dvl import DvlGeometryError, IllConditionedFitError, WindowError
from lib.ekf import STATE_LABELS, InnovationError, UpdateMode
from lib.experiment_config import ConfigError, ExperimentConfig, load_experiment_config
from lib.frames import gravity_ned
from lib.ins import MechanizationError
from lib.observability import (
    MEASUREMENT_MODELS,
    ObservabilityError,
    TrajectorySegment,
    analytic_U,
    gramian_nullspace,
    principal_angles,
    subspace_angle,
)
from lib.report import build_comparison, rmse_report
from lib.simulation import (
    EnsembleResult,
    acc_rmse_sweep,
    run_monte_carlo,
    run_single,
    simulate_streams,
)
from lib.trajectory import TrajectoryError

LOG_MAX_SIZE = 1024 * 1024  # 1MB
LOG_BACKUP_COUNT = 2
LOG_NAME = "insdvl.log"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

DOMAIN_ERRORS = (DvlGeometryError, WindowError, IllConditionedFitError, MechanizationError,
                 InnovationError, ObservabilityError, TrajectoryError, RuntimeError)

OBSERVABILITY_MODELS = ("velocity", "acceleration", "acceleration_only")

logger = logging.getLogger(__name__)


def setup_logging(log_dir: str) -> logging.Logger:
    """配置日志: 输出目录下滚动文件 + 控制台"""
    os.makedirs(log_dir, exist_ok=True)

    root_logger = logging.getLogger()
    root_logger.setLevel(logging.INFO)
    root_logger.handlers = []

    file_handler = RotatingFileHandler(
        os.path.join(log_dir, LOG_NAME), maxBytes=LOG_MAX_SIZE,
        backupCount=LOG_BACKUP_COUNT, encoding="utf-8"
    )
    file_handler.setLevel(logging.INFO)
    file_handler.setFormatter(logging.Formatter(
        "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
    ))
    root_logger.addHandler(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.INFO)
    console_handler.setFormatter(logging.Formatter(
        "%(asctime)s [%(levelname)s] %(message)s"
    ))
    root_logger.addHandler(console_handler)
    return logger


def _path(config: ExperimentConfig, *parts: str) -> str:
    return os.path.join(config.output_dir, *parts)


def cmd_simulate(config: ExperimentConfig) -> List[str]:
    truth, imu, dvl = simulate_streams(config, run_index=0)
    logger.info(f"真值 {truth.name}: {truth.duration:.1f} s, 航程 {truth.path_length():.1f} m, "
                f"{truth.info}")
    return [
        save_csv(truth.to_frame(), _path(config, "truth.csv")),
        save_csv(imu.to_frame(), _path(config, "imu.csv")),
        save_csv(dvl.to_frame(), _path(config, "dvl.csv")),
    ]


def cmd_fuse(config: ExperimentConfig) -> List[str]:
    truth = config.build_truth()
    files = []
    for mode in config.update_modes:
        record = run_single(config, mode, run_index=0, truth=truth)
        stats = record.stats
        logger.info(f"{mode.value}: 速度更新 {stats.velocity_accepted} 接受 / "
                    f"{stats.velocity_rejected} 拒绝, 加速度更新 {stats.accel_accepted} 接受 / "
                    f"{stats.accel_rejected} 拒绝")
        for kind in ("velocity", "acceleration"):
            nis = stats.mean_nis(kind)
            if nis is not None:
                logger.info(f"{mode.value}: {kind} 平均 NIS {nis:.3f} (自由度 3)")
        if record.diverged:
            logger.warning(f"{mode.value} 单次运行发散: {record.message}")
        files.append(save_csv(record.error_frame(), _path(config, f"fuse_{mode.value}_errors.csv")))
        files.append(save_csv(record.sigma_frame(), _path(config, f"fuse_{mode.value}_sigma.csv")))
    return files


def write_ensemble(config: ExperimentConfig, result: EnsembleResult) -> List[str]:
    mode = result.mode.value
    files = [save_csv(result.to_frame(), _path(config, f"ensemble_{mode}.csv"))]
    lo, hi = result.nees_bounds
    files.append(write_json({
        "mode": mode,
        "n_runs": result.n_runs,
        "diverged": result.diverged,
        "covariance_violations": result.covariance_violations,
        "nees_bounds": [lo, hi],
        "nees_fraction_inside": float(np.mean((result.nees >= lo) & (result.nees <= hi))),
    }, _path(config, f"ensemble_{mode}.json")))
    for record in result.runs:
        name = f"run_{record.run_index:03d}.csv"
        files.append(save_csv(record.error_frame(), _path(config, "runs", mode, name)))
    return files


def write_report(config: ExperimentConfig, baseline: EnsembleResult,
                 accel: Optional[EnsembleResult]) -> List[str]:
    report = build_comparison(
        config.name, baseline, accel,
        average_policy=config.report.average_policy,
        unobservable_states=config.report.unobservable_states,
        divergence_warning_fraction=config.report.divergence_warning_fraction,
    )
    return [
        write_text(report.to_markdown(), _path(config, "report.md")),
        write_json(report.to_dict(), _path(config, "report.json")),
    ]


def run_experiment(config: ExperimentConfig) -> List[str]:
    """
    Monte Carlo 实验: 真值 CSV, 每次运行误差 CSV, 集合 CSV 与对比报告

    Returns:
        写入的文件列表
    """
    truth = config.build_truth()
    files = [save_csv(truth.to_frame(), _path(config, "truth.csv"))]
    results = {}
    for mode in config.update_modes:
        results[mode] = run_monte_carlo(config, mode, truth=truth)
        files.extend(write_ensemble(config, results[mode]))

    if UpdateMode.BASELINE in results:
        files.extend(write_report(config, results[UpdateMode.BASELINE],
                                  results.get(UpdateMode.ACCEL)))
    else:
        logger.info("未运行基线模式, 跳过 report.md / report.json (对比报告需要基线集合)")
    return files


def cmd_compare(config: ExperimentConfig) -> List[str]:
    """从 ensemble_*.csv 重建报告"""
    loaded = {}
    for mode in (UpdateMode.BASELINE, UpdateMode.ACCEL):
        csv_path = _path(config, f"ensemble_{mode.value}.csv")
        if not os.path.exists(csv_path):
            continue
        with open(_path(config, f"ensemble_{mode.value}.json"), "r", encoding="utf-8") as f:
            meta = json.load(f)
        result = EnsembleResult.from_frame(load_csv(csv_path), mode, int(meta["n_runs"]))
        result.diverged = list(meta["diverged"])
        loaded[mode] = result
    if UpdateMode.BASELINE not in loaded:
        raise OSError(f"缺少 {_path(config, 'ensemble_baseline.csv')}, 请先运行 montecarlo")
    return write_report(config, loaded[UpdateMode.BASELINE], loaded.get(UpdateMode.ACCEL))


def cmd_observability(config: ExperimentConfig) -> List[str]:
    settings = config.observability
    dt = 1.0 / config.sensors.imu_rate
    U = analytic_U(gravity_ned(config.geo))
    segments = {"static": TrajectorySegment.static(settings.static_duration, dt, config.geo)}
    truth = config.build_truth()
    segments["maneuver"] = TrajectorySegment.from_truth(
        truth, settings.maneuver_start, settings.maneuver_end)

    rows, angle_rows = [], []
    files = []
    for seg_name, segment in segments.items():
        for model in OBSERVABILITY_MODELS:
            basis = gramian_nullspace(segment, MEASUREMENT_MODELS[model], settings.tol,
                                      settings.epoch_spacing, settings.max_epochs)
            angle = subspace_angle(basis, U) if basis.dim else float(np.pi / 2)
            rows.append({"segment": seg_name, "model": model, "null_dim": basis.dim,
                         "max_angle_to_U": angle})
            if basis.dim:
                for i, a in enumerate(principal_angles(basis, U)):
                    angle_rows.append({"segment": seg_name, "model": model, "index": i,
                                       "angle": float(a)})
                frame = pd.DataFrame(basis.basis, columns=[f"v{i}" for i in range(basis.dim)])
                frame.insert(0, "state", STATE_LABELS)
                files.append(save_csv(frame, _path(config, f"nullspace_{seg_name}_{model}.csv")))
            logger.info(f"{seg_name}/{model}: 零空间维数 {basis.dim}, 与 U 最大主角 {angle:.3e} rad")
    files.append(save_csv(pd.DataFrame(rows), _path(config, "observability.csv")))
    files.append(save_csv(pd.DataFrame(angle_rows, columns=["segment", "model", "index", "angle"]),
                          _path(config, "principal_angles.csv")))
    return files


def cmd_rmse_sweep(config: ExperimentConfig) -> List[str]:
    truth, _, dvl = simulate_streams(config, run_index=0)
    curve = acc_rmse_sweep(truth, dvl, config.rmse.n_range, config.geometry)
    summary = rmse_report(curve)
    return [
        save_csv(summary.frame, _path(config, "rmse_sweep.csv")),
        write_json(summary.to_dict(), _path(config, "rmse_summary.json")),
    ]


COMMANDS = {
    "simulate": cmd_simulate,
    "fuse": cmd_fuse,
    "montecarlo": run_experiment,
    "observability": cmd_observability,
    "rmse-sweep": cmd_rmse_sweep,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="insdvl", description="INS/DVL 加速度更新实验")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="实验 YAML")
    parser.add_argument("--seed", type=int, default=None, help="覆盖 experiment.seed")
    parser.add_argument("--out", default=None, help="覆盖 experiment.output_dir")
    parser.add_argument("--mode", choices=["baseline", "accel", "both"], default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_experiment_config(args.config)
        config = config.with_overrides(seed=args.seed, output_dir=args.out, mode=args.mode)
        os.makedirs(config.output_dir, exist_ok=True)
    except (ConfigError, OSError) as e:
        print(f"错误: {e}", file=sys.stderr)
        return EXIT_CONFIG

    setup_logging(os.path.join(config.output_dir, "logs"))
    logger.info(f"{args.command}: {config.name} (seed={config.seed}, mode={config.mode})")
    try:
        files = [write_json(config.summary(), _path(config, "experiment.json"))]
        files += COMMANDS[args.command](config)
    except (ConfigError, OSError) as e:
        logger.error(f"{args.command} 失败: {e}")
        record_run(config.output_dir, args.command, config.source_path, config.seed,
                   config.mode, success=False, error=str(e))
        print(f"错误: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DOMAIN_ERRORS + (ValueError,) as e:
        logger.exception(f"{args.command} 失败: {e}")
        record_run(config.output_dir, args.command, config.source_path, config.seed,
                   config.mode, success=False, error=str(e))
        return EXIT_FAILED

    record_run(config.output_dir, args.command, config.source_path, config.seed,
               config.mode, files=files)
    logger.info(f"{args.command} 完成, 写入 {len(files)} 个文件")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
