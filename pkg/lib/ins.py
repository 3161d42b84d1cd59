#!/usr/bin/env python3
"""
INS Mechanization
- NED 系速度与姿态递推
- 地球自转 / 转移角速度补偿 (可关闭)
- 零偏估计在每个 IMU 样本上扣除
- 两次 DVL 更新之间的样本整段批量递推
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from lib.frames import (
    GeoContext,
    earth_rate_ned,
    gravity_ned,
    orthonormalize,
    skew,
    transport_rate_ned,
)

logger = logging.getLogger(__name__)

MAX_STEP = 0.1  # s


class MechanizationError(ValueError):
    """惯导递推输入非法"""
    pass


@dataclass
class ImuSample:
    """区间 [t - dt, t] 的平均比力与角速度, 时间戳取区间末端"""
    time: float
    specific_force: np.ndarray     # m/s², 载体系
    angular_rate: np.ndarray       # rad/s, 载体系


@dataclass
class NavState:
    time: float
    velocity: np.ndarray           # NED, m/s
    attitude: np.ndarray           # R_b^n
    geo: GeoContext = field(default_factory=GeoContext)
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def body_velocity(self) -> np.ndarray:
        return self.attitude.T @ self.velocity


def nav_rates(velocity: np.ndarray, geo: GeoContext,
              earth_rates: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """返回 (ω_ie^n, ω_en^n); 关闭时均为零"""
    if not earth_rates:
        return np.zeros(3), np.zeros(3)
    return earth_rate_ned(geo), transport_rate_ned(velocity, geo)


def coriolis(velocity: np.ndarray, geo: GeoContext, earth_rates: bool = True) -> np.ndarray:
    """(Ω_en + 2Ω_ie) v"""
    w_ie, w_en = nav_rates(velocity, geo, earth_rates)
    return np.cross(w_en + 2.0 * w_ie, velocity)


@dataclass
class MechanizedSpan:
    """连续若干 IMU 步的递推结果, 第 k 行为第 k 步结束时的状态"""
    state: NavState                # 末端状态
    velocity: np.ndarray           # (n, 3)
    attitude: np.ndarray           # (n, 3, 3)


def _check_span(force: np.ndarray, rate: np.ndarray, dts: np.ndarray):
    if force.shape != rate.shape or force.shape != (len(dts), 3):
        raise MechanizationError(f"IMU 数组形状不一致: f{force.shape}, ω{rate.shape}, dt{dts.shape}")
    if np.any(dts <= 0.0) or np.any(dts > MAX_STEP):
        raise MechanizationError(f"步长非法: dt ∈ [{dts.min():.4g}, {dts.max():.4g}]")
    if not (np.all(np.isfinite(force)) and np.all(np.isfinite(rate))):
        raise MechanizationError("IMU 样本含非有限值")


def mechanize_span(state: NavState, force, rate, dts, earth_rates: bool = True) -> MechanizedSpan:
    """
    连续多步惯导递推, 零偏估计在区间内不变

    每步与 mechanize_step 相同; ω_ie + ω_en 与 Coriolis 矩阵取区间起点速度,
    全部姿态增量一次性由 Rotation.from_rotvec 生成, 末端再投影回 SO(3).

    Args:
        state: 起点导航状态
        force: (n, 3) 原始比力
        rate: (n, 3) 原始角速度
        dts: (n,) 各步步长 (s)
        earth_rates: 是否计入地球自转与转移角速度

    Returns:
        MechanizedSpan
    """
    force = np.asarray(force, dtype=float).reshape(-1, 3)
    rate = np.asarray(rate, dtype=float).reshape(-1, 3)
    dts = np.asarray(dts, dtype=float).reshape(-1)
    _check_span(force, rate, dts)
    n = len(dts)
    if n == 0:
        return MechanizedSpan(state=state, velocity=np.zeros((0, 3)), attitude=np.zeros((0, 3, 3)))

    w_ie, w_en = nav_rates(state.velocity, state.geo, earth_rates)
    steps = dts[:, None]
    mats = Rotation.from_rotvec(np.vstack([
        (rate - state.gyro_bias) * steps,
        -(w_ie + w_en) * steps,
    ])).as_matrix()
    body, nav = mats[:n], mats[n:]

    attitude = np.empty((n + 1, 3, 3))
    attitude[0] = state.attitude
    for k in range(n):
        attitude[k + 1] = nav[k] @ attitude[k] @ body[k]
    attitude[n] = orthonormalize(attitude[n])

    acc = (0.5 * np.einsum("nij,nj->ni", attitude[:-1] + attitude[1:], force - state.accel_bias)
           + gravity_ned(state.geo))
    W = skew(w_en + 2.0 * w_ie)
    velocity = np.empty((n + 1, 3))
    velocity[0] = state.velocity
    for k in range(n):
        velocity[k + 1] = velocity[k] + dts[k] * (acc[k] - W @ velocity[k])

    end = replace(state, time=state.time + float(np.sum(dts)),
                  velocity=velocity[n], attitude=attitude[n])
    return MechanizedSpan(state=end, velocity=velocity[1:], attitude=attitude[1:])


def mechanize_step(state: NavState, imu: ImuSample, dt: float,
                   earth_rates: bool = True) -> NavState:
    """
    单步惯导递推

    姿态: R⁺ = exp(-[ω_in dt×]) R exp([ω̂ dt×]), 再正交化
    速度: v⁺ = v + dt·(½(R + R⁺) f̂ + g - (Ω_en + 2Ω_ie) v)

    Args:
        state: 当前导航状态
        imu: 区间平均 IMU 样本
        dt: 步长 (s), 0 < dt <= 0.1
        earth_rates: 是否计入地球自转与转移角速度

    Returns:
        新的 NavState
    """
    try:
        span = mechanize_span(state, imu.specific_force, imu.angular_rate, [dt], earth_rates)
    except MechanizationError as e:
        raise MechanizationError(f"{e} (t={imu.time})") from e
    return span.state


def body_rate_relative(state: NavState, angular_rate: np.ndarray,
                       earth_rates: bool = True) -> np.ndarray:
    """载体相对导航系角速度 ω_nb^b = ω̂_ib - Rᵀ ω_in"""
    w_ie, w_en = nav_rates(state.velocity, state.geo, earth_rates)
    return (np.asarray(angular_rate, dtype=float) - state.gyro_bias
            - state.attitude.T @ (w_ie + w_en))

