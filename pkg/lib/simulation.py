#!/usr/bin/env python3
"""
Simulation
- 单次融合运行: 真值 → 传感器合成 → 滤波 → 误差记录
- Monte Carlo 集合 (joblib 并行, 与执行顺序无关)
- 加速度 RMSE 随窗口长度的扫描
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import chi2

from lib.dvl import DvlGeometry, VelocityWindow, extract_acceleration, ls_velocity_many
from lib.ekf import (
    BA,
    BG,
    DV,
    PHI,
    STATE_DIM,
    STATE_LABELS,
    FilterConfig,
    FilterDivergenceError,
    InnovationError,
    MAX_MISALIGNMENT,
    NavigationFilter,
    UpdateMode,
    UpdateStats,
    is_valid_covariance,
)
from lib.experiment_config import ExperimentConfig
from lib.frames import so3_exp, so3_log
from lib.ins import NavState
from lib.sensors import DvlStream, ImuStream, synth_dvl, synth_imu
from lib.trajectory import TruthTrajectory

logger = logging.getLogger(__name__)

NEES_CONFIDENCE = 0.95

# 每次运行的独立随机流
STREAM_IMU = 0
STREAM_DVL = 1
STREAM_INIT = 2


@dataclass
class RunRecord:
    run_index: int
    mode: UpdateMode
    time: np.ndarray            # (K,) DVL 时刻 (含 t0)
    errors: np.ndarray          # (K, 12) 估计 - 真值
    sigma: np.ndarray           # (K, 12) 滤波估计标准差
    nees: np.ndarray            # (K,)
    stats: UpdateStats = field(default_factory=UpdateStats)
    covariance_violations: int = 0
    diverged: bool = False
    message: str = ""

    def error_frame(self) -> pd.DataFrame:
        return _state_frame(self.time, {"": self.errors})

    def sigma_frame(self) -> pd.DataFrame:
        return _state_frame(self.time, {"": self.sigma})


@dataclass
class EnsembleResult:
    mode: UpdateMode
    time: np.ndarray
    est_sigma: np.ndarray       # 各次运行滤波 σ 的均值
    ens_sigma: np.ndarray       # 集合误差标准差
    ens_mean: np.ndarray        # 集合误差均值
    nees: np.ndarray            # 平均 NEES
    n_runs: int
    diverged: List[int] = field(default_factory=list)
    covariance_violations: int = 0
    runs: List[RunRecord] = field(default_factory=list, repr=False)

    @property
    def nees_bounds(self) -> Tuple[float, float]:
        """平均 NEES 的双侧 χ² 置信区间"""
        alpha = 1.0 - NEES_CONFIDENCE
        dof = STATE_DIM * self.n_runs
        lo, hi = chi2.ppf([alpha / 2, 1 - alpha / 2], dof) / self.n_runs
        return float(lo), float(hi)

    def to_frame(self) -> pd.DataFrame:
        df = _state_frame(self.time, {"est_": self.est_sigma, "ens_": self.ens_sigma,
                                      "mean_": self.ens_mean})
        df["nees"] = self.nees
        return df

    @classmethod
    def from_frame(cls, df: pd.DataFrame, mode: UpdateMode, n_runs: int) -> "EnsembleResult":
        def cols(prefix):
            return df[[f"{prefix}{label}" for label in STATE_LABELS]].to_numpy()
        return cls(mode=mode, time=df["time"].to_numpy(), est_sigma=cols("est_"),
                   ens_sigma=cols("ens_"), ens_mean=cols("mean_"),
                   nees=df["nees"].to_numpy(), n_runs=n_runs)


def _state_frame(time: np.ndarray, blocks: Dict[str, np.ndarray]) -> pd.DataFrame:
    data = {"time": time}
    for prefix, arr in blocks.items():
        for i, label in enumerate(STATE_LABELS):
            data[f"{prefix}{label}"] = arr[:, i]
    return pd.DataFrame(data)


def run_seed(seed: int, run_index: int, stream: int) -> np.random.SeedSequence:
    """(seed, run, stream) 唯一确定的种子, 不依赖调用顺序"""
    return np.random.SeedSequence(seed, spawn_key=(run_index, stream))


def truth_errors(state: NavState, truth_state: NavState,
                 true_accel_bias: np.ndarray, true_gyro_bias: np.ndarray) -> np.ndarray:
    """按滤波器约定计算真实误差: δv = v̂ - v, R = exp([φ×])R̂, b - b̂"""
    e = np.zeros(STATE_DIM)
    e[DV] = state.velocity - truth_state.velocity
    e[PHI] = so3_log(truth_state.attitude @ state.attitude.T)
    e[BA] = true_accel_bias - state.accel_bias
    e[BG] = true_gyro_bias - state.gyro_bias
    return e


def initial_estimate(truth: TruthTrajectory, cfg: FilterConfig,
                     rng: Optional[np.random.Generator] = None) -> NavState:
    """按 P0 抽取初始速度与姿态误差; rng 为空时返回真值"""
    state = truth.nav_state(0)
    if rng is None:
        return state
    P0 = cfg.initial_covariance()
    dv = rng.multivariate_normal(np.zeros(3), P0[DV, DV])
    phi = rng.multivariate_normal(np.zeros(3), P0[PHI, PHI])
    state.velocity = state.velocity + dv
    state.attitude = so3_exp(-phi) @ state.attitude
    return state


def run_fusion(truth: TruthTrajectory, imu: ImuStream, dvl: DvlStream, cfg: FilterConfig,
               geometry: Optional[DvlGeometry] = None,
               initial_state: Optional[NavState] = None, run_index: int = 0) -> RunRecord:
    """
    单次融合运行

    Args:
        truth: 真值轨迹
        imu: IMU 数据流 (含真实零偏记录)
        dvl: DVL 数据流
        cfg: 滤波配置 (mode 决定是否使用加速度更新)
        geometry: DVL 波束几何
        initial_state: 初始估计, 为空时取真值
        run_index: 运行编号 (仅用于记录)

    Returns:
        RunRecord, 每个 DVL 时刻记录一次; 发散时截断并标记
    """
    geometry = geometry or DvlGeometry()
    filt = NavigationFilter(initial_state or truth.nav_state(0), cfg)
    v_dvl = ls_velocity_many(dvl.beams, geometry) if len(dvl) else np.zeros((0, 3))

    times, errors, sigmas, nees = [], [], [], []
    violations = 0

    def record(k_truth: int, k_imu: int):
        nonlocal violations
        e = truth_errors(filt.state, truth.nav_state(k_truth),
                         imu.accel_bias[k_imu], imu.gyro_bias[k_imu])
        if not is_valid_covariance(filt.P):
            violations += 1
            logger.warning(f"协方差失去对称/半正定: t={filt.state.time:.3f}")
        times.append(float(truth.time[k_truth]))
        errors.append(e)
        sigmas.append(filt.sigma)
        nees.append(float(e @ np.linalg.solve(filt.P, e)))
        return e

    diverged = False
    message = ""
    record(0, 0)
    k0 = 0
    try:
        for j, k in enumerate(dvl.truth_index):
            k = int(k)
            if k < 1 or k > len(imu):
                continue
            filt.propagate_many(imu.time[k0:k], imu.specific_force[k0:k], imu.angular_rate[k0:k])
            k0 = k
            filt.update(float(dvl.time[j]), v_dvl[j])
            e = record(k, k - 1)
            if np.linalg.norm(e[PHI]) > MAX_MISALIGNMENT:
                raise FilterDivergenceError(f"姿态误差 {np.linalg.norm(e[PHI]):.3f} rad")
    except (FilterDivergenceError, InnovationError) as exc:
        diverged = True
        message = str(exc)
        logger.warning(f"运行 {run_index} ({cfg.mode.value}) 发散: {exc}")

    return RunRecord(
        run_index=run_index, mode=cfg.mode, time=np.array(times),
        errors=np.vstack(errors), sigma=np.vstack(sigmas), nees=np.array(nees),
        stats=filt.stats, covariance_violations=violations,
        diverged=diverged, message=message,
    )


def simulate_streams(config: ExperimentConfig, run_index: int = 0,
                     truth: Optional[TruthTrajectory] = None):
    """生成一次运行的 (truth, imu, dvl)"""
    truth = truth if truth is not None else config.build_truth()
    imu = synth_imu(truth, config.sensors, run_seed(config.seed, run_index, STREAM_IMU),
                    earth_rates=config.filter.earth_rates)
    dvl = synth_dvl(truth, config.sensors, run_seed(config.seed, run_index, STREAM_DVL),
                    config.geometry, config.dvl_to_body)
    return truth, imu, dvl


def run_single(config: ExperimentConfig, mode: UpdateMode, run_index: int,
               truth: Optional[TruthTrajectory] = None) -> RunRecord:
    """一次完整 Monte Carlo 运行; 两种模式使用同一组传感器与初始误差样本"""
    truth, imu, dvl = simulate_streams(config, run_index, truth)
    cfg = config.filter_config(mode)
    init_rng = np.random.default_rng(run_seed(config.seed, run_index, STREAM_INIT))
    state0 = initial_estimate(truth, cfg, init_rng)
    return run_fusion(truth, imu, dvl, cfg, config.geometry, state0, run_index)


def run_monte_carlo(config: ExperimentConfig, mode: UpdateMode, n_runs: Optional[int] = None,
                    n_jobs: Optional[int] = None,
                    truth: Optional[TruthTrajectory] = None) -> EnsembleResult:
    """
    Monte Carlo 集合

    Args:
        config: 实验配置
        mode: 更新模式
        n_runs: 运行次数 (>= 2), 默认取配置
        n_jobs: joblib 并行数, 默认取配置
        truth: 可复用的真值轨迹

    Returns:
        EnsembleResult; 发散运行被剔除并记录编号
    """
    n_runs = config.n_runs if n_runs is None else n_runs
    if n_runs < 2:
        raise ValueError(f"Monte Carlo 至少需要 2 次运行: {n_runs}")
    truth = truth if truth is not None else config.build_truth()
    n_jobs = config.n_jobs if n_jobs is None else n_jobs
    logger.info(f"Monte Carlo 开始: {config.name} {mode.value}, {n_runs} 次, n_jobs={n_jobs}")

    records = Parallel(n_jobs=n_jobs)(
        delayed(run_single)(config, mode, i, truth) for i in range(n_runs)
    )
    records = sorted(records, key=lambda r: r.run_index)
    good = [r for r in records if not r.diverged]
    diverged = [r.run_index for r in records if r.diverged]
    if diverged:
        logger.warning(f"{len(diverged)}/{n_runs} 次运行发散并被剔除: {diverged}")
    if len(good) < 2:
        raise RuntimeError(f"有效运行不足 2 次 (发散 {len(diverged)})")

    E = np.stack([r.errors for r in good])
    S = np.stack([r.sigma for r in good])
    N = np.stack([r.nees for r in good])
    result = EnsembleResult(
        mode=mode,
        time=good[0].time,
        est_sigma=S.mean(axis=0),
        ens_sigma=E.std(axis=0, ddof=1),
        ens_mean=E.mean(axis=0),
        nees=N.mean(axis=0),
        n_runs=len(good),
        diverged=diverged,
        covariance_violations=sum(r.covariance_violations for r in records),
        runs=records,
    )
    logger.info(f"Monte Carlo 完成: {mode.value}, 有效 {len(good)} 次")
    return result


def acc_rmse_sweep(truth: TruthTrajectory, dvl: DvlStream, n_range: Sequence[int],
                   geometry: Optional[DvlGeometry] = None) -> List[Tuple[int, float]]:
    """
    加速度 RMSE 随窗口长度 n 的变化

    每个 DVL 时刻用最近 n 个速度样本提取加速度, 与该时刻 (窗口最新样本) 的真实 DVL 系
    速度变化率比较, RMSE = sqrt(mean ‖â - a‖²)

    Returns:
        [(n, rmse)], 与 n_range 顺序一致
    """
    geometry = geometry or DvlGeometry()
    if any(n < 2 or n > 20 for n in n_range):
        raise ValueError(f"窗口长度必须在 [2, 20]: {list(n_range)}")
    v_d = ls_velocity_many(dvl.beams, geometry)
    curve = []
    for n in n_range:
        if len(dvl) < n:
            raise ValueError(f"DVL 样本数 {len(dvl)} 少于窗口长度 {n}")
        sq = []
        for j in range(n - 1, len(dvl)):
            window = VelocityWindow(dvl.time[j - n + 1:j + 1], v_d[j - n + 1:j + 1])
            err = extract_acceleration(window) - dvl.accel_dvl[j]
            sq.append(float(err @ err))
        curve.append((int(n), float(np.sqrt(np.mean(sq)))))
    logger.info(f"RMSE 扫描完成: {curve}")
    return curve
