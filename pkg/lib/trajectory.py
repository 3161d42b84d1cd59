#!/usr/bin/env python3
"""
Truth Trajectories
- 直线 (可带常值纵向加速度) / 静止
- 割草机式测线 (直线段 + U 形转弯)
- 8 字机动 (两个反向转弯环 + 交叉直线段, 转速平滑过渡)

所有轨迹保持水平, 航向与速度由解析剖面给出, 导数精确一致.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.spatial.transform import Rotation

from lib.frames import GeoContext
from lib.ins import NavState

logger = logging.getLogger(__name__)

DEFAULT_DT = 0.01
MAX_TURN_RATE_DEG = 30.0


class TrajectoryError(ValueError):
    """轨迹参数非法"""
    pass


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def smoothstep_integral(x):
    """∫₀ˣ smoothstep"""
    x = np.clip(x, 0.0, 1.0)
    return x ** 3 - 0.5 * x ** 4


@dataclass
class RateSegment:
    """航向角速度剖面的一段: start_rate 平滑过渡到 end_rate (相等时为常值)"""
    duration: float
    start_rate: float
    end_rate: float

    def rate(self, tau):
        return self.start_rate + (self.end_rate - self.start_rate) * smoothstep(tau / self.duration)

    def angle(self, tau):
        x = np.asarray(tau) / self.duration
        return (self.start_rate * np.asarray(tau)
                + (self.end_rate - self.start_rate) * self.duration * smoothstep_integral(x))

    @property
    def total_angle(self) -> float:
        return float(self.angle(self.duration))


class HeadingProfile:
    """分段航向剖面, 给出精确的 ψ(t) 与 ψ̇(t)"""

    def __init__(self, segments: Sequence[RateSegment], initial_heading: float = 0.0):
        if not segments:
            raise TrajectoryError("航向剖面为空")
        self.segments = list(segments)
        durations = np.array([s.duration for s in self.segments])
        if np.any(durations <= 0):
            raise TrajectoryError("航向剖面段时长必须为正")
        self.starts = np.concatenate([[0.0], np.cumsum(durations)[:-1]])
        angles = np.array([s.total_angle for s in self.segments])
        self.start_angles = initial_heading + np.concatenate([[0.0], np.cumsum(angles)[:-1]])
        self.duration = float(durations.sum())

    def evaluate(self, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.starts, t, side="right") - 1, 0, len(self.segments) - 1)
        psi = np.empty_like(t)
        rate = np.empty_like(t)
        for i, seg in enumerate(self.segments):
            m = idx == i
            if not np.any(m):
                continue
            tau = np.clip(t[m] - self.starts[i], 0.0, seg.duration)
            psi[m] = self.start_angles[i] + seg.angle(tau)
            rate[m] = seg.rate(tau)
        return psi, rate


@dataclass
class SpeedProfile:
    """u(t) = mean·(1 + amplitude·sin(2πt/period)) + accel·t"""
    mean: float
    amplitude: float = 0.0
    period: float = 20.0
    accel: float = 0.0

    def evaluate(self, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        w = 2.0 * math.pi / self.period
        u = self.mean * (1.0 + self.amplitude * np.sin(w * t)) + self.accel * t
        du = self.mean * self.amplitude * w * np.cos(w * t) + self.accel
        return u, du


@dataclass
class TruthTrajectory:
    name: str
    time: np.ndarray            # (N,)
    velocity: np.ndarray        # (N, 3) NED
    attitude: np.ndarray        # (N, 3, 3) R_b^n
    accel_ned: np.ndarray       # (N, 3) v̇ⁿ
    body_rate: np.ndarray       # (N, 3) ω_nb^b
    position: np.ndarray        # (N, 3) 相对起点 NED
    geo: GeoContext = field(default_factory=GeoContext)
    info: Dict[str, Any] = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.time[1] - self.time[0])

    @property
    def duration(self) -> float:
        return float(self.time[-1] - self.time[0])

    @property
    def velocity_body(self) -> np.ndarray:
        return np.einsum("nji,nj->ni", self.attitude, self.velocity)

    @property
    def body_accel(self) -> np.ndarray:
        """Rᵀ v̇ⁿ"""
        return np.einsum("nji,nj->ni", self.attitude, self.accel_ned)

    @property
    def velocity_rate_body(self) -> np.ndarray:
        """载体系速度的导数 d(Rᵀv)/dt = Rᵀv̇ - ω_nb × v^b"""
        return self.body_accel - np.cross(self.body_rate, self.velocity_body)

    def nav_state(self, k: int) -> NavState:
        return NavState(time=float(self.time[k]), velocity=self.velocity[k].copy(),
                        attitude=self.attitude[k].copy(), geo=self.geo)

    def path_length(self) -> float:
        return float(trapezoid(np.linalg.norm(self.velocity, axis=1), self.time))

    def to_frame(self) -> pd.DataFrame:
        """每个采样一行: 位置, 速度, 欧拉角, 加速度, 角速度"""
        euler = Rotation.from_matrix(self.attitude).as_euler("ZYX")
        data = {"time": self.time}
        for i, axis in enumerate("ned"):
            data[f"pos_{axis}"] = self.position[:, i]
        for i, axis in enumerate("ned"):
            data[f"vel_{axis}"] = self.velocity[:, i]
        data["roll"] = euler[:, 2]
        data["pitch"] = euler[:, 1]
        data["yaw"] = euler[:, 0]
        for i, axis in enumerate("ned"):
            data[f"acc_{axis}"] = self.accel_ned[:, i]
        for i, axis in enumerate("xyz"):
            data[f"rate_{axis}"] = self.body_rate[:, i]
        return pd.DataFrame(data)


def _time_grid(duration: float, dt: float) -> np.ndarray:
    if duration <= 0 or dt <= 0:
        raise TrajectoryError(f"时长与步长必须为正: duration={duration}, dt={dt}")
    n = int(round(duration / dt))
    return np.arange(n + 1) * dt


def build_level_trajectory(name: str, time: np.ndarray, heading: HeadingProfile,
                           speed: SpeedProfile, geo: Optional[GeoContext] = None,
                           info: Optional[Dict[str, Any]] = None) -> TruthTrajectory:
    """由航向与速度剖面生成水平运动真值"""
    geo = geo or GeoContext()
    psi, psi_dot = heading.evaluate(time)
    u, du = speed.evaluate(time)
    c, s = np.cos(psi), np.sin(psi)
    zero = np.zeros_like(time)
    velocity = np.column_stack([u * c, u * s, zero])
    accel = np.column_stack([du * c - u * psi_dot * s, du * s + u * psi_dot * c, zero])
    attitude = Rotation.from_euler("ZYX", np.column_stack([psi, zero, zero])).as_matrix()
    body_rate = np.column_stack([zero, zero, psi_dot])
    position = cumulative_trapezoid(velocity, time, axis=0, initial=0)
    info = dict(info or {})
    info.setdefault("mean_abs_turn_rate_deg", float(np.degrees(np.mean(np.abs(psi_dot)))))
    info.setdefault("max_abs_turn_rate_deg", float(np.degrees(np.max(np.abs(psi_dot)))))
    info.setdefault("mean_speed", float(np.mean(u)))
    truth = TruthTrajectory(name=name, time=time, velocity=velocity, attitude=attitude,
                            accel_ned=accel, body_rate=body_rate, position=position,
                            geo=geo, info=info)
    truth.info.setdefault("closure_error", float(np.linalg.norm(position[-1])))
    logger.info(f"生成轨迹 {name}: {truth.duration:.1f} s, {len(time)} 个采样")
    return truth


def gen_static(duration: float, dt: float = DEFAULT_DT,
               geo: Optional[GeoContext] = None, heading: float = 0.0) -> TruthTrajectory:
    time = _time_grid(duration, dt)
    return build_level_trajectory(
        "static", time, HeadingProfile([RateSegment(time[-1], 0.0, 0.0)], heading),
        SpeedProfile(0.0), geo)


def gen_straight(duration: float, speed: float, heading: float = 0.0, accel: float = 0.0,
                 dt: float = DEFAULT_DT, geo: Optional[GeoContext] = None) -> TruthTrajectory:
    """
    直线航行

    Args:
        duration: 时长 (s)
        speed: 初始速度 (m/s)
        heading: 航向 (rad)
        accel: 纵向常值加速度 (m/s²)
    """
    if speed <= 0:
        raise TrajectoryError(f"速度必须为正: {speed}")
    time = _time_grid(duration, dt)
    return build_level_trajectory(
        "straight", time, HeadingProfile([RateSegment(time[-1], 0.0, 0.0)], heading),
        SpeedProfile(speed, accel=accel), geo)


def gen_lawnmower(leg_duration: float = 300.0,
                  turn_rates: Sequence[float] = (6.0, 9.0, 12.0, 15.0),
                  speed: float = 0.6 / 3.6, heading: float = 0.0,
                  dt: float = DEFAULT_DT, geo: Optional[GeoContext] = None) -> TruthTrajectory:
    """
    割草机式测线: 直线段与 180° 转弯交替, 转向左右交替

    Args:
        leg_duration: 每段直线时长 (s)
        turn_rates: 各 U 形转弯的常值转速 (°/s), 共 len+1 段直线
        speed: 航速 (m/s)
    """
    if leg_duration <= 0 or speed <= 0:
        raise TrajectoryError("直线段时长与航速必须为正")
    if not turn_rates:
        raise TrajectoryError("至少需要一个转弯")
    segments: List[RateSegment] = [RateSegment(leg_duration, 0.0, 0.0)]
    for i, rate_deg in enumerate(turn_rates):
        if not (0.0 < rate_deg <= MAX_TURN_RATE_DEG):
            raise TrajectoryError(f"转速必须在 (0, {MAX_TURN_RATE_DEG}] °/s: {rate_deg}")
        rate = math.radians(rate_deg) * (1.0 if i % 2 == 0 else -1.0)
        segments.append(RateSegment(math.pi / abs(rate), rate, rate))
        segments.append(RateSegment(leg_duration, 0.0, 0.0))
    profile = HeadingProfile(segments, heading)
    time = _time_grid(profile.duration, dt)
    return build_level_trajectory(
        "lawnmower", time, profile, SpeedProfile(speed), geo,
        {"turn_rates_deg": list(turn_rates), "leg_duration": leg_duration})


def _lobe_segments(rate: float, turn_angle: float, ramp_fraction: float) -> List[RateSegment]:
    """带平滑升降速的转弯, 总转角 turn_angle (带符号)"""
    T = abs(turn_angle) / (abs(rate) * (1.0 - ramp_fraction))
    ramp = ramp_fraction * T
    signed = math.copysign(abs(rate), turn_angle)
    hold = [RateSegment(T - 2.0 * ramp, signed, signed)]
    if ramp <= 0:
        return hold
    return [RateSegment(ramp, 0.0, signed)] + hold + [RateSegment(ramp, signed, 0.0)]


def gen_figure_eight(avg_speed: float = 0.9, duration: float = 394.0,
                     max_turn_rate: float = 17.0, mean_turn_rate: float = 1.41,
                     ramp_fraction: float = 0.15, speed_amplitude: float = 0.2,
                     speed_period: float = 20.0, dt: float = DEFAULT_DT,
                     geo: Optional[GeoContext] = None) -> TruthTrajectory:
    """
    8 字机动

    两个反向转弯环, 每个转 π + 2γ, 由长度 L = c / sin γ 的交叉直线连接以闭合 (c 为转弯弦长).
    环内转速由总时长与平均角速度目标解出, 不得超过 max_turn_rate.

    Args:
        avg_speed: 平均航速 (m/s)
        duration: 时长 (s)
        max_turn_rate: 转速上限 (°/s)
        mean_turn_rate: 平均角速度大小目标 (°/s)
        ramp_fraction: 每个转弯中升/降速段占比
        speed_amplitude: 航速正弦调制幅度 (相对)
        speed_period: 航速调制周期 (s)
    """
    if min(avg_speed, duration, max_turn_rate, mean_turn_rate) <= 0:
        raise TrajectoryError("8 字参数必须为正")
    if not (0.0 <= ramp_fraction < 0.5):
        raise TrajectoryError(f"ramp_fraction 必须在 [0, 0.5): {ramp_fraction}")
    theta = math.radians(mean_turn_rate) * duration / 2.0
    gamma = (theta - math.pi) / 2.0
    if not (0.0 < gamma < math.pi / 2):
        raise TrajectoryError(f"平均角速度 {mean_turn_rate} °/s 与时长不构成 8 字")

    # 单位转速、单位航速下的转弯时长与弦长
    unit = HeadingProfile(_lobe_segments(1.0, -theta, ramp_fraction))
    tau = np.linspace(0.0, unit.duration, 20001)
    psi, _ = unit.evaluate(tau)
    chord = np.array([trapezoid(np.cos(psi), tau), trapezoid(np.sin(psi), tau)])
    mid_dir = np.array([math.cos(-theta / 2), math.sin(-theta / 2)])
    chord_len = float(chord @ mid_dir)
    if chord_len <= 0:
        raise TrajectoryError("转弯弦长非正, 请减小 ramp_fraction")
    K = 2.0 * unit.duration + 2.0 * chord_len / math.sin(gamma)
    rate = K / duration
    if math.degrees(rate) > max_turn_rate:
        raise TrajectoryError(
            f"所需环内转速 {math.degrees(rate):.2f} °/s 超过上限 {max_turn_rate} °/s")
    leg = chord_len / (rate * math.sin(gamma))

    segments = [RateSegment(leg / 2.0, 0.0, 0.0)]
    segments += _lobe_segments(rate, -theta, ramp_fraction)
    segments.append(RateSegment(leg, 0.0, 0.0))
    segments += _lobe_segments(rate, theta, ramp_fraction)
    segments.append(RateSegment(leg / 2.0, 0.0, 0.0))
    profile = HeadingProfile(segments, initial_heading=gamma)
    time = _time_grid(profile.duration, dt)
    truth = build_level_trajectory(
        "figure_eight", time, profile,
        SpeedProfile(avg_speed, speed_amplitude, speed_period), geo,
        {"lobe_rate_deg": math.degrees(rate), "lobe_angle_deg": math.degrees(theta)})
    if truth.info["max_abs_turn_rate_deg"] > max_turn_rate + 1e-9:
        raise TrajectoryError("实际最大转速超过上限")
    return truth


TRAJECTORY_BUILDERS = {
    "static": gen_static,
    "straight": gen_straight,
    "lawnmower": gen_lawnmower,
    "figure_eight": gen_figure_eight,
}


def build_trajectory(kind: str, params: Dict[str, Any], dt: float = DEFAULT_DT,
                     geo: Optional[GeoContext] = None) -> TruthTrajectory:
    """按名称与参数生成轨迹 (角度参数单位为度)"""
    if kind not in TRAJECTORY_BUILDERS:
        raise TrajectoryError(f"未知轨迹类型: {kind}")
    kwargs = dict(params)
    if "heading_deg" in kwargs:
        kwargs["heading"] = math.radians(kwargs.pop("heading_deg"))
    try:
        return TRAJECTORY_BUILDERS[kind](dt=dt, geo=geo, **kwargs)
    except TypeError as e:
        raise TrajectoryError(f"{kind} 轨迹参数非法: {e}") from e
