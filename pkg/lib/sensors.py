#!/usr/bin/env python3
"""
Sensor Synthesis
- 由真值反推区间平均 IMU 输出 (与 ins.mechanize_step 互逆)
- 零偏 (常值 + 随机游走) 与白噪声注入
- DVL 波束仿真
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, Optional

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from lib.dvl import DvlErrorModel, DvlGeometry, simulate_beams
from lib.frames import DEG_PER_HOUR, MILLI_G, gravity_ned
from lib.ins import ImuSample, coriolis, nav_rates
from lib.trajectory import TruthTrajectory

logger = logging.getLogger(__name__)


@dataclass
class SensorErrorBudget:
    accel_bias_mg: float = 1.0              # 1σ 或固定值
    gyro_bias_dph: float = 10.0
    accel_noise_density: float = 1e-3       # m/s/√s
    gyro_noise_density: float = 5e-5        # rad/√s
    accel_bias_rw: float = 1e-6             # m/s²/√s
    gyro_bias_rw: float = 1e-8              # rad/s/√s
    random_biases: bool = True              # True: 每次运行按 σ 抽取; False: 各轴取固定值
    dvl: DvlErrorModel = field(default_factory=lambda: DvlErrorModel(noise_std=0.006))
    imu_rate: float = 100.0                 # Hz
    dvl_rate: float = 1.0                   # Hz

    def __post_init__(self):
        for name in ("accel_noise_density", "gyro_noise_density", "accel_bias_rw", "gyro_bias_rw"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} 不能为负")
        if self.random_biases and (self.accel_bias_mg < 0 or self.gyro_bias_dph < 0):
            raise ValueError("随机零偏的标准差不能为负")
        if self.imu_rate <= 0 or self.dvl_rate <= 0:
            raise ValueError("采样率必须为正")
        if self.dvl_rate > self.imu_rate:
            raise ValueError(f"DVL 频率 {self.dvl_rate} 不能高于 IMU 频率 {self.imu_rate}")
        ratio = self.imu_rate / self.dvl_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"IMU/DVL 频率比必须为整数: {ratio}")

    @classmethod
    def zero(cls, imu_rate: float = 100.0, dvl_rate: float = 1.0) -> "SensorErrorBudget":
        return cls(accel_bias_mg=0.0, gyro_bias_dph=0.0, accel_noise_density=0.0,
                   gyro_noise_density=0.0, accel_bias_rw=0.0, gyro_bias_rw=0.0,
                   random_biases=False, dvl=DvlErrorModel(), imu_rate=imu_rate,
                   dvl_rate=dvl_rate)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SensorErrorBudget":
        kwargs: Dict[str, Any] = {}
        for key in ("accel_bias_mg", "gyro_bias_dph", "accel_noise_density",
                    "gyro_noise_density", "accel_bias_rw", "gyro_bias_rw",
                    "imu_rate", "dvl_rate"):
            if key in data:
                kwargs[key] = float(data[key])
        if "random_biases" in data:
            kwargs["random_biases"] = bool(data["random_biases"])
        if "dvl" in data:
            kwargs["dvl"] = DvlErrorModel.from_dict(data["dvl"] or {})
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accel_bias_mg": self.accel_bias_mg,
            "gyro_bias_dph": self.gyro_bias_dph,
            "accel_noise_density": self.accel_noise_density,
            "gyro_noise_density": self.gyro_noise_density,
            "accel_bias_rw": self.accel_bias_rw,
            "gyro_bias_rw": self.gyro_bias_rw,
            "random_biases": self.random_biases,
            "dvl": self.dvl.to_dict(),
            "imu_rate": self.imu_rate,
            "dvl_rate": self.dvl_rate,
        }

    @property
    def dvl_ratio(self) -> int:
        return int(round(self.imu_rate / self.dvl_rate))


@dataclass
class ImuStream:
    """第 k 个样本代表 [t_k, t_(k+1)] 区间, 时间戳为 t_(k+1)"""
    time: np.ndarray
    specific_force: np.ndarray
    angular_rate: np.ndarray
    accel_bias: np.ndarray      # 真实零偏
    gyro_bias: np.ndarray

    def __len__(self) -> int:
        return len(self.time)

    def sample(self, k: int) -> ImuSample:
        return ImuSample(time=float(self.time[k]), specific_force=self.specific_force[k],
                         angular_rate=self.angular_rate[k])

    def __iter__(self) -> Iterator[ImuSample]:
        for k in range(len(self)):
            yield self.sample(k)

    def to_frame(self) -> pd.DataFrame:
        data = {"time": self.time}
        for name, arr in (("f", self.specific_force), ("w", self.angular_rate),
                          ("ba", self.accel_bias), ("bg", self.gyro_bias)):
            for i, axis in enumerate("xyz"):
                data[f"{name}_{axis}"] = arr[:, i]
        return pd.DataFrame(data)


@dataclass
class DvlStream:
    time: np.ndarray
    beams: np.ndarray           # (M, 4)
    truth_index: np.ndarray     # 对应真值采样下标
    velocity_dvl: np.ndarray    # 真实 DVL 系速度
    accel_dvl: np.ndarray       # 真实 DVL 系速度变化率

    def __len__(self) -> int:
        return len(self.time)

    def to_frame(self) -> pd.DataFrame:
        data = {"time": self.time}
        for i in range(4):
            data[f"beam_{i + 1}"] = self.beams[:, i]
        for i, axis in enumerate("xyz"):
            data[f"vel_{axis}"] = self.velocity_dvl[:, i]
        for i, axis in enumerate("xyz"):
            data[f"acc_{axis}"] = self.accel_dvl[:, i]
        return pd.DataFrame(data)


def ideal_imu(truth: TruthTrajectory, earth_rates: bool = True):
    """
    无误差区间平均 IMU 输出

    ω̄ = log(R_kᵀ exp([ω_in dt×]) R_(k+1)) / dt
    f̄ = (½(R_k + R_(k+1)))⁻¹ ((v_(k+1) - v_k)/dt - g + (Ω_en + 2Ω_ie) v_k)

    Returns:
        (specific_force, angular_rate), 形状均为 (N-1, 3)
    """
    dt = truth.dt
    R0, R1 = truth.attitude[:-1], truth.attitude[1:]
    v0, v1 = truth.velocity[:-1], truth.velocity[1:]
    w_ie, w_en = nav_rates(v0, truth.geo, earth_rates)
    w_in = np.broadcast_to(w_ie + w_en, v0.shape)
    E = Rotation.from_rotvec(w_in * dt).as_matrix()
    M = np.einsum("nji,njk,nkl->nil", R0, E, R1)
    omega = Rotation.from_matrix(M).as_rotvec() / dt

    cor = coriolis(v0, truth.geo, earth_rates)
    rhs = (v1 - v0) / dt - gravity_ned(truth.geo) + cor
    force = np.linalg.solve(0.5 * (R0 + R1), rhs[..., None])[..., 0]
    return force, omega


def _bias_series(rng: np.random.Generator, n: int, initial: np.ndarray,
                 rw: float, dt: float) -> np.ndarray:
    if rw <= 0:
        return np.tile(initial, (n, 1))
    steps = rw * math.sqrt(dt) * rng.standard_normal((n, 3))
    steps[0] = 0.0
    return initial + np.cumsum(steps, axis=0)


def synth_imu(truth: TruthTrajectory, budget: SensorErrorBudget, seed=None,
              earth_rates: bool = True) -> ImuStream:
    """
    合成 IMU 数据流

    Args:
        truth: 真值轨迹, 步长必须等于 1 / imu_rate
        budget: 误差预算
        seed: 整数, SeedSequence 或 Generator
        earth_rates: 是否计入地球自转与转移角速度

    Returns:
        ImuStream, 同一 seed 结果逐位一致
    """
    dt = truth.dt
    if abs(dt - 1.0 / budget.imu_rate) > 1e-9:
        raise ValueError(f"真值步长 {dt} 与 IMU 频率 {budget.imu_rate} Hz 不一致")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    force, omega = ideal_imu(truth, earth_rates)
    n = len(force)

    if budget.random_biases:
        ba0 = budget.accel_bias_mg * MILLI_G * rng.standard_normal(3)
        bg0 = budget.gyro_bias_dph * DEG_PER_HOUR * rng.standard_normal(3)
    else:
        ba0 = np.full(3, budget.accel_bias_mg * MILLI_G)
        bg0 = np.full(3, budget.gyro_bias_dph * DEG_PER_HOUR)
    ba = _bias_series(rng, n, ba0, budget.accel_bias_rw, dt)
    bg = _bias_series(rng, n, bg0, budget.gyro_bias_rw, dt)

    f_noise = budget.accel_noise_density / math.sqrt(dt) * rng.standard_normal((n, 3))
    w_noise = budget.gyro_noise_density / math.sqrt(dt) * rng.standard_normal((n, 3))
    return ImuStream(
        time=truth.time[1:].copy(),
        specific_force=force + ba + f_noise,
        angular_rate=omega + bg + w_noise,
        accel_bias=ba,
        gyro_bias=bg,
    )


def synth_dvl(truth: TruthTrajectory, budget: SensorErrorBudget, seed=None,
              geometry: Optional[DvlGeometry] = None,
              dvl_to_body: Optional[np.ndarray] = None) -> DvlStream:
    """按 DVL 频率采样真值, 旋转到 DVL 系后仿真波束速度"""
    geometry = geometry or DvlGeometry()
    C = np.eye(3) if dvl_to_body is None else np.asarray(dvl_to_body, dtype=float)
    if abs(truth.dt - 1.0 / budget.imu_rate) > 1e-9:
        raise ValueError(f"真值步长 {truth.dt} 与 IMU 频率 {budget.imu_rate} Hz 不一致")
    if seed is None:
        seed = budget.dvl.seed
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    idx = np.arange(budget.dvl_ratio, len(truth.time), budget.dvl_ratio)
    v_d = truth.velocity_body[idx] @ C
    a_d = truth.velocity_rate_body[idx] @ C
    beams = np.vstack([
        simulate_beams(v, geometry, budget.dvl, rng, float(truth.time[k])).y
        for k, v in zip(idx, v_d)
    ]) if len(idx) else np.zeros((0, 4))
    return DvlStream(time=truth.time[idx].copy(), beams=beams, truth_index=idx,
                     velocity_dvl=v_d, accel_dvl=a_d)
