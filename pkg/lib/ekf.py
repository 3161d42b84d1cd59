#!/usr/bin/env python3
"""
Error-State EKF
- 12 维误差状态 (δv, φ, b_a, b_g) 与协方差传播
- DVL 速度量测更新 (基线)
- DVL 加速度量测更新
- 闭环校正与新息门限

符号约定:
  δv = v̂ - v
  R_b^n(真) = exp([φ×]) R̂_b^n
  b_a, b_g 为残余零偏 b - b̂
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.stats import chi2

from lib.dvl import DvlGeometry, VelocityWindow, extract_acceleration, slope_variance
from lib.frames import DEG_PER_HOUR, MILLI_G, MILLIRAD, gravity_ned, skew, so3_exp
from lib.ins import ImuSample, NavState, body_rate_relative, coriolis, mechanize_span, nav_rates

logger = logging.getLogger(__name__)

STATE_DIM = 12
STATE_LABELS = [
    "dv_n", "dv_e", "dv_d",
    "phi_n", "phi_e", "phi_d",
    "ba_x", "ba_y", "ba_z",
    "bg_x", "bg_y", "bg_z",
]
MAX_MISALIGNMENT = 0.5          # rad, 超出即视为发散
SYMMETRY_TOLERANCE = 1e-10
PSD_TOLERANCE = 1e-9


class StateIndex(IntEnum):
    """误差状态块起始下标"""
    DV = 0
    PHI = 3
    BA = 6
    BG = 9


def block(idx: StateIndex) -> slice:
    return slice(int(idx), int(idx) + 3)


DV, PHI, BA, BG = (block(i) for i in StateIndex)


class UpdateMode(Enum):
    BASELINE = "baseline"   # 仅速度
    ACCEL = "accel"         # 速度 + 加速度


class MisalignmentRate(Enum):
    NAVIGATION = "navigation"   # ωⁿ = -ω_in^n
    GYRO = "gyro"               # ωⁿ = R ω̂_b
    NONE = "none"


class VelocityJacobian(Enum):
    """H_v 中 [vⁿ×] 的取值点"""
    ESTIMATE = "estimate"         # 先验估计 v̂ⁿ, 与本次量测噪声无关
    MEASUREMENT = "measurement"   # R̂ R_d^b ṽ^d


class InnovationError(RuntimeError):
    """新息协方差不可逆"""
    pass


class FilterDivergenceError(RuntimeError):
    """姿态误差超出小角度范围"""
    pass


def _default_vel_cov() -> np.ndarray:
    return DvlGeometry().ls_covariance(0.006)


@dataclass
class FilterConfig:
    # 过程噪声密度
    accel_noise_density: float = 1e-3       # m/s/√s
    gyro_noise_density: float = 5e-5        # rad/√s
    accel_bias_rw: float = 1e-6             # m/s²/√s
    gyro_bias_rw: float = 1e-8              # rad/s/√s
    # 量测噪声 (DVL 系)
    vel_noise_cov: np.ndarray = field(default_factory=_default_vel_cov)
    acc_noise_cov: Optional[np.ndarray] = None
    # 初始不确定度
    init_velocity_sigma: float = 0.05                                   # m/s
    init_attitude_sigma: np.ndarray = field(
        default_factory=lambda: np.array([10.0, 10.0, 17.5]) * MILLIRAD)
    init_accel_bias_sigma: float = 1.0 * MILLI_G
    init_gyro_bias_sigma: float = 10.0 * DEG_PER_HOUR
    # 结构
    dvl_to_body: np.ndarray = field(default_factory=lambda: np.eye(3))
    mode: UpdateMode = UpdateMode.ACCEL
    accel_window: int = 3
    dvl_period: float = 1.0
    overlapping_windows: bool = False
    acc_noise_inflation: float = 2.0
    gate_probability: Optional[float] = 0.999
    update_order: Tuple[str, ...] = ("velocity", "acceleration")
    misalignment_rate: MisalignmentRate = MisalignmentRate.NAVIGATION
    velocity_jacobian: VelocityJacobian = VelocityJacobian.ESTIMATE
    earth_rates: bool = True
    rotating_frame_compensation: bool = True
    covariance_substeps: int = 10
    max_dvl_speed: float = 10.0

    def __post_init__(self):
        self.mode = UpdateMode(self.mode)
        self.misalignment_rate = MisalignmentRate(self.misalignment_rate)
        self.velocity_jacobian = VelocityJacobian(self.velocity_jacobian)
        self.vel_noise_cov = np.asarray(self.vel_noise_cov, dtype=float).reshape(3, 3)
        self.init_attitude_sigma = np.broadcast_to(
            np.asarray(self.init_attitude_sigma, dtype=float), (3,)).copy()
        self.dvl_to_body = np.asarray(self.dvl_to_body, dtype=float).reshape(3, 3)
        self.update_order = tuple(self.update_order)
        if self.accel_window < 2:
            raise ValueError(f"加速度窗口长度必须 >= 2: {self.accel_window}")
        if self.covariance_substeps < 1:
            raise ValueError("covariance_substeps 必须 >= 1")
        if sorted(self.update_order) != ["acceleration", "velocity"]:
            raise ValueError(f"update_order 必须是 velocity/acceleration 的排列: {self.update_order}")
        if self.acc_noise_cov is None:
            self.acc_noise_cov = default_acceleration_noise(
                self.vel_noise_cov, self.accel_window, self.dvl_period, self.acc_noise_inflation)
        self.acc_noise_cov = np.asarray(self.acc_noise_cov, dtype=float).reshape(3, 3)
        for name in ("vel_noise_cov", "acc_noise_cov"):
            if not is_valid_covariance(getattr(self, name)):
                raise ValueError(f"{name} 不是对称半正定矩阵")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], vel_noise_cov: Optional[np.ndarray] = None,
                  dvl_period: float = 1.0,
                  dvl_to_body: Optional[np.ndarray] = None) -> "FilterConfig":
        """
        从配置字典创建, 文件中使用 mrad / mg / °/h 等显示单位

        Args:
            data: filter 配置段
            vel_noise_cov: 未显式给出速度噪声时使用的默认协方差
            dvl_period: DVL 采样周期 (s)
            dvl_to_body: DVL 安装矩阵 R_d^b
        """
        kwargs: Dict[str, Any] = {"dvl_period": dvl_period}
        for key in ("accel_noise_density", "gyro_noise_density", "accel_bias_rw",
                    "gyro_bias_rw", "acc_noise_inflation", "max_dvl_speed"):
            if key in data:
                kwargs[key] = float(data[key])
        for key in ("accel_window", "covariance_substeps"):
            if key in data:
                kwargs[key] = int(data[key])
        for key in ("overlapping_windows", "earth_rates", "rotating_frame_compensation"):
            if key in data:
                kwargs[key] = bool(data[key])
        if "mode" in data:
            kwargs["mode"] = UpdateMode(data["mode"])
        if "misalignment_rate" in data:
            kwargs["misalignment_rate"] = MisalignmentRate(data["misalignment_rate"])
        if "velocity_jacobian" in data:
            kwargs["velocity_jacobian"] = VelocityJacobian(data["velocity_jacobian"])
        if "gate_probability" in data:
            gp = data["gate_probability"]
            kwargs["gate_probability"] = None if gp is None else float(gp)
        if "update_order" in data:
            kwargs["update_order"] = tuple(data["update_order"])

        if "velocity_noise_std" in data:
            std = np.broadcast_to(np.asarray(data["velocity_noise_std"], dtype=float), (3,))
            kwargs["vel_noise_cov"] = np.diag(std ** 2)
        elif vel_noise_cov is not None:
            kwargs["vel_noise_cov"] = vel_noise_cov
        if "acceleration_noise_std" in data:
            std = np.broadcast_to(np.asarray(data["acceleration_noise_std"], dtype=float), (3,))
            kwargs["acc_noise_cov"] = np.diag(std ** 2)

        init = data.get("initial_sigma", {}) or {}
        if "velocity_mps" in init:
            kwargs["init_velocity_sigma"] = float(init["velocity_mps"])
        if "roll_pitch_mrad" in init or "heading_mrad" in init:
            rp = float(init.get("roll_pitch_mrad", 10.0))
            hd = float(init.get("heading_mrad", 17.5))
            kwargs["init_attitude_sigma"] = np.array([rp, rp, hd]) * MILLIRAD
        if "accel_bias_mg" in init:
            kwargs["init_accel_bias_sigma"] = float(init["accel_bias_mg"]) * MILLI_G
        if "gyro_bias_dph" in init:
            kwargs["init_gyro_bias_sigma"] = float(init["gyro_bias_dph"]) * DEG_PER_HOUR

        if dvl_to_body is not None:
            kwargs["dvl_to_body"] = dvl_to_body
        return cls(**kwargs)

    def initial_covariance(self) -> np.ndarray:
        sig = np.concatenate([
            np.full(3, self.init_velocity_sigma),
            self.init_attitude_sigma,
            np.full(3, self.init_accel_bias_sigma),
            np.full(3, self.init_gyro_bias_sigma),
        ])
        return np.diag(sig ** 2)

    def noise_density(self) -> np.ndarray:
        """连续时间噪声谱密度 Q_c (12x12 对角)"""
        d = np.repeat([
            self.accel_noise_density, self.gyro_noise_density,
            self.accel_bias_rw, self.gyro_bias_rw,
        ], 3)
        return np.diag(d ** 2)

    def gate_threshold(self, dof: int = 3) -> Optional[float]:
        if self.gate_probability is None:
            return None
        return float(chi2.ppf(self.gate_probability, dof))

    @property
    def uses_acceleration(self) -> bool:
        return self.mode is UpdateMode.ACCEL


def default_acceleration_noise(vel_cov: np.ndarray, m: int, period: float,
                               inflation: float = 2.0) -> np.ndarray:
    """速度噪声经斜率公式传播后乘以膨胀系数"""
    return np.asarray(vel_cov, dtype=float) * slope_variance(1.0, m, period) * inflation


@dataclass
class ErrorState:
    vector: np.ndarray = field(default_factory=lambda: np.zeros(STATE_DIM))
    accepted: bool = True
    nis: Optional[float] = None

    @classmethod
    def zeros(cls) -> "ErrorState":
        return cls()

    @classmethod
    def rejected(cls, nis: Optional[float] = None) -> "ErrorState":
        return cls(accepted=False, nis=nis)

    @property
    def dv(self) -> np.ndarray:
        return self.vector[DV]

    @property
    def phi(self) -> np.ndarray:
        return self.vector[PHI]

    @property
    def ba(self) -> np.ndarray:
        return self.vector[BA]

    @property
    def bg(self) -> np.ndarray:
        return self.vector[BG]


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def is_valid_covariance(P: np.ndarray, rel_tol: float = PSD_TOLERANCE) -> bool:
    """对称且最小特征值 >= -rel_tol·trace"""
    P = np.asarray(P, dtype=float)
    if not np.all(np.isfinite(P)):
        return False
    if np.max(np.abs(P - P.T), initial=0.0) > SYMMETRY_TOLERANCE * max(1.0, np.max(np.abs(P))):
        return False
    min_eig = np.linalg.eigvalsh(symmetrize(P))[0]
    return min_eig >= -rel_tol * max(np.trace(P), 0.0)


def build_F(state: NavState, f_b, w_b,
            misalignment_rate: MisalignmentRate = MisalignmentRate.NAVIGATION,
            earth_rates: bool = True) -> np.ndarray:
    """
    系统矩阵 F

    δv̇ = [fⁿ×] φ + R b_a
    φ̇  = [ωⁿ×] φ - R b_g

    Args:
        state: 当前导航状态 (含零偏估计)
        f_b: 原始比力
        w_b: 原始角速度
        misalignment_rate: ωⁿ 的取法
        earth_rates: 导航系角速度是否计入地球项
    """
    R = state.attitude
    f_n = R @ (np.asarray(f_b, dtype=float) - state.accel_bias)
    rate = MisalignmentRate(misalignment_rate)
    if rate is MisalignmentRate.NAVIGATION:
        w_ie, w_en = nav_rates(state.velocity, state.geo, earth_rates)
        w_n = -(w_ie + w_en)
    elif rate is MisalignmentRate.GYRO:
        w_n = R @ (np.asarray(w_b, dtype=float) - state.gyro_bias)
    else:
        w_n = np.zeros(3)

    F = np.zeros((STATE_DIM, STATE_DIM))
    F[DV, PHI] = skew(f_n)
    F[DV, BA] = R
    F[PHI, PHI] = skew(w_n)
    F[PHI, BG] = -R
    return F


def process_noise(cfg: FilterConfig, dt: float, attitude: Optional[np.ndarray] = None) -> np.ndarray:
    """离散过程噪声 Q = G Q_c Gᵀ dt, G = diag(R, R, I, I)"""
    R = np.eye(3) if attitude is None else attitude
    G = linalg.block_diag(R, R, np.eye(3), np.eye(3))
    return G @ cfg.noise_density() @ G.T * dt


def predict(P: np.ndarray, F: np.ndarray, cfg: FilterConfig, dt: float,
            attitude: Optional[np.ndarray] = None) -> np.ndarray:
    """协方差一阶预测 P⁻ = Φ P Φᵀ + Q, Φ = I + F dt"""
    if dt <= 0:
        raise ValueError(f"预测步长必须为正: {dt}")
    Phi = np.eye(STATE_DIM) + F * dt
    return symmetrize(Phi @ P @ Phi.T + process_noise(cfg, dt, attitude))


def velocity_measurement_matrix(attitude: np.ndarray, v_n_meas) -> np.ndarray:
    """H_v = [R̂ᵀ, -R̂ᵀ[ṽⁿ×], 0, 0]"""
    H = np.zeros((3, STATE_DIM))
    H[:, DV] = attitude.T
    H[:, PHI] = -attitude.T @ skew(v_n_meas)
    return H


def acceleration_measurement_matrix(attitude: np.ndarray, g_n) -> np.ndarray:
    """H_a = [0, -R̂ᵀ[gⁿ×], I, 0]"""
    H = np.zeros((3, STATE_DIM))
    H[:, PHI] = -attitude.T @ skew(g_n)
    H[:, BA] = np.eye(3)
    return H


def kalman_update(P: np.ndarray, H: np.ndarray, dz: np.ndarray, R: np.ndarray,
                  gate: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray, float, bool]:
    """
    通用卡尔曼量测更新 (Joseph 形式)

    Args:
        P: 先验协方差
        H: 量测矩阵
        dz: 残差
        R: 量测噪声协方差
        gate: NIS 门限, 为空时不做门限检验

    Returns:
        (δx, P⁺, NIS, 是否接受); 拒绝时 δx = 0 且 P 不变
    """
    S = symmetrize(H @ P @ H.T + R)
    try:
        factor = linalg.cho_factor(S)
    except linalg.LinAlgError as e:
        raise InnovationError(f"新息协方差不正定: {e}") from e
    nis = float(dz @ linalg.cho_solve(factor, dz))
    if gate is not None and nis > gate:
        return np.zeros(P.shape[0]), P, nis, False
    K = linalg.cho_solve(factor, H @ P).T
    IKH = np.eye(P.shape[0]) - K @ H
    P_new = symmetrize(IKH @ P @ IKH.T + K @ R @ K.T)
    return K @ dz, P_new, nis, True


def velocity_update(state: NavState, P: np.ndarray, v_dvl_d, cfg: FilterConfig) -> Tuple[ErrorState, np.ndarray]:
    """
    DVL 速度量测更新, 残差在载体系构造

    δz = R̂ᵀ v̂ - R_d^b ṽ^d
    H_v 的 [vⁿ×] 默认取先验 v̂ⁿ; 取量测值时低速下 H 的方向随量测噪声抖动,
    航向与速度误差会被错误地分离
    """
    v_dvl_d = np.asarray(v_dvl_d, dtype=float)
    if not np.all(np.isfinite(v_dvl_d)) or np.linalg.norm(v_dvl_d) >= cfg.max_dvl_speed:
        logger.warning(f"DVL 速度不合理, 丢弃: t={state.time:.3f}, v={v_dvl_d}")
        return ErrorState.rejected(), P

    C = cfg.dvl_to_body
    v_b_meas = C @ v_dvl_d
    R_hat = state.attitude
    dz = R_hat.T @ state.velocity - v_b_meas
    if cfg.velocity_jacobian is VelocityJacobian.ESTIMATE:
        v_lin = state.velocity
    else:
        v_lin = R_hat @ v_b_meas
    H = velocity_measurement_matrix(R_hat, v_lin)
    dx, P_new, nis, ok = kalman_update(P, H, dz, C @ cfg.vel_noise_cov @ C.T, cfg.gate_threshold(3))
    if not ok:
        logger.warning(f"速度量测被门限拒绝: t={state.time:.3f}, NIS={nis:.2f}")
        return ErrorState.rejected(nis), P
    return ErrorState(vector=dx, nis=nis), P_new


def predicted_body_acceleration(state: NavState, f_b, cfg: FilterConfig,
                                w_b=None) -> np.ndarray:
    """
    载体系速度变化率的预测值

    â = f̂ + R̂ᵀg [- R̂ᵀ(Ω_en + 2Ω_ie) v̂ - ω_nb × v̂^b]
    """
    R_hat = state.attitude
    pred = np.asarray(f_b, dtype=float) - state.accel_bias + R_hat.T @ gravity_ned(state.geo)
    if cfg.rotating_frame_compensation:
        pred = pred - R_hat.T @ coriolis(state.velocity, state.geo, cfg.earth_rates)
        if w_b is not None:
            w_nb = body_rate_relative(state, w_b, cfg.earth_rates)
            pred = pred - np.cross(w_nb, state.body_velocity)
    return pred


def accel_update(state: NavState, P: np.ndarray, a_dvl_d, f_b, cfg: FilterConfig,
                 w_b=None) -> Tuple[ErrorState, np.ndarray]:
    """
    DVL 加速度量测更新

    Args:
        state: 导航状态
        P: 先验协方差
        a_dvl_d: extract_acceleration 得到的 DVL 系加速度
        f_b: 窗口内平均原始比力
        cfg: 滤波配置
        w_b: 窗口内平均原始角速度, 用于旋转系补偿

    Returns:
        (ErrorState, P⁺)
    """
    a_dvl_d = np.asarray(a_dvl_d, dtype=float)
    if not np.all(np.isfinite(a_dvl_d)):
        logger.warning(f"DVL 加速度含非有限值, 丢弃: t={state.time:.3f}")
        return ErrorState.rejected(), P

    C = cfg.dvl_to_body
    dz = predicted_body_acceleration(state, f_b, cfg, w_b) - C @ a_dvl_d
    H = acceleration_measurement_matrix(state.attitude, gravity_ned(state.geo))
    dx, P_new, nis, ok = kalman_update(P, H, dz, C @ cfg.acc_noise_cov @ C.T, cfg.gate_threshold(3))
    if not ok:
        logger.warning(f"加速度量测被门限拒绝: t={state.time:.3f}, NIS={nis:.2f}")
        return ErrorState.rejected(nis), P
    return ErrorState(vector=dx, nis=nis), P_new


def apply_correction(state: NavState, dx: ErrorState) -> NavState:
    """
    闭环校正: v ← v - δv, R ← exp([φ×]) R, b ← b + δb

    Raises:
        FilterDivergenceError: ‖φ‖ >= 0.5 rad
    """
    vec = dx.vector
    angle = float(np.linalg.norm(vec[PHI]))
    if angle >= MAX_MISALIGNMENT:
        raise FilterDivergenceError(f"姿态校正量过大: {angle:.3f} rad (t={state.time:.3f})")
    return replace(
        state,
        velocity=state.velocity - vec[DV],
        attitude=so3_exp(vec[PHI]) @ state.attitude,
        accel_bias=state.accel_bias + vec[BA],
        gyro_bias=state.gyro_bias + vec[BG],
    )


@dataclass
class UpdateStats:
    velocity_accepted: int = 0
    velocity_rejected: int = 0
    accel_accepted: int = 0
    accel_rejected: int = 0
    nis_sum: Dict[str, float] = field(default_factory=lambda: {"velocity": 0.0, "acceleration": 0.0})

    def record(self, kind: str, dx: ErrorState):
        prefix = "velocity" if kind == "velocity" else "accel"
        if dx.accepted:
            setattr(self, f"{prefix}_accepted", getattr(self, f"{prefix}_accepted") + 1)
            self.nis_sum[kind] += dx.nis or 0.0
        else:
            setattr(self, f"{prefix}_rejected", getattr(self, f"{prefix}_rejected") + 1)

    def mean_nis(self, kind: str) -> Optional[float]:
        n = self.velocity_accepted if kind == "velocity" else self.accel_accepted
        return self.nis_sum[kind] / n if n else None


class NavigationFilter:
    """
    惯导 + DVL 误差状态滤波器

    两次 DVL 之间的 IMU 样本批量递推导航状态, 协方差每 covariance_substeps 个样本用块平均 F 传播一次;
    DVL 样本到达时先补齐协方差, 再按 update_order 依次做速度 / 加速度更新并立即闭环校正.
    """

    def __init__(self, state: NavState, cfg: FilterConfig, P: Optional[np.ndarray] = None):
        self.state = state
        self.cfg = cfg
        self.P = cfg.initial_covariance() if P is None else np.array(P, dtype=float)
        self.stats = UpdateStats()
        # 协方差传播累加量
        self._pend_f = np.zeros(3)
        self._pend_w = np.zeros(3)
        self._pend_dt = 0.0
        self._pend_n = 0
        # 相邻 DVL 时刻之间的 IMU 积分
        self._int_f = np.zeros(3)
        self._int_w = np.zeros(3)
        self._int_dt = 0.0
        # 加速度窗口
        self._win_t: List[float] = []
        self._win_v: List[np.ndarray] = []
        self._win_f: List[np.ndarray] = []
        self._win_w: List[np.ndarray] = []
        self._win_dt: List[float] = []

    def propagate(self, imu: ImuSample):
        self.propagate_many([imu.time], [imu.specific_force], [imu.angular_rate])

    def propagate_many(self, time, force, rate):
        """
        递推一段连续 IMU 样本 (通常为两次 DVL 更新之间的全部样本)

        导航状态整段批量递推; 协方差仍每 covariance_substeps 个样本传播一次,
        F 取该块末端的状态.

        Args:
            time: (n,) 各样本区间末端时间戳
            force: (n, 3) 原始比力
            rate: (n, 3) 原始角速度
        """
        time = np.asarray(time, dtype=float).reshape(-1)
        if len(time) == 0:
            return
        force = np.asarray(force, dtype=float).reshape(-1, 3)
        rate = np.asarray(rate, dtype=float).reshape(-1, 3)
        dts = np.diff(time, prepend=self.state.time)
        span = mechanize_span(self.state, force, rate, dts, self.cfg.earth_rates)

        f_dt = force * dts[:, None]
        w_dt = rate * dts[:, None]
        self._int_f += f_dt.sum(axis=0)
        self._int_w += w_dt.sum(axis=0)
        self._int_dt += float(dts.sum())

        n = len(time)
        start = 0
        while start < n:
            stop = min(n, start + self.cfg.covariance_substeps - self._pend_n)
            self._pend_f += f_dt[start:stop].sum(axis=0)
            self._pend_w += w_dt[start:stop].sum(axis=0)
            self._pend_dt += float(dts[start:stop].sum())
            self._pend_n += stop - start
            if self._pend_n >= self.cfg.covariance_substeps:
                self.state = replace(span.state, time=float(time[stop - 1]),
                                     velocity=span.velocity[stop - 1],
                                     attitude=span.attitude[stop - 1])
                self.flush_covariance()
            start = stop
        self.state = replace(span.state, time=float(time[-1]))

    def flush_covariance(self):
        if self._pend_dt <= 0:
            return
        f_mean = self._pend_f / self._pend_dt
        w_mean = self._pend_w / self._pend_dt
        F = build_F(self.state, f_mean, w_mean, self.cfg.misalignment_rate, self.cfg.earth_rates)
        self.P = predict(self.P, F, self.cfg, self._pend_dt, self.state.attitude)
        self._pend_f = np.zeros(3)
        self._pend_w = np.zeros(3)
        self._pend_dt = 0.0
        self._pend_n = 0

    def _push_window(self, time: float, v_dvl_d: np.ndarray):
        if self._win_t:
            self._win_f.append(self._int_f.copy())
            self._win_w.append(self._int_w.copy())
            self._win_dt.append(self._int_dt)
        self._win_t.append(time)
        self._win_v.append(np.asarray(v_dvl_d, dtype=float))
        self._int_f = np.zeros(3)
        self._int_w = np.zeros(3)
        self._int_dt = 0.0

    def _pop_window(self):
        if self.cfg.overlapping_windows:
            for buf in (self._win_t, self._win_v, self._win_f, self._win_w, self._win_dt):
                buf.pop(0)
        else:
            for buf in (self._win_t, self._win_v, self._win_f, self._win_w, self._win_dt):
                buf.clear()

    def _correct(self, kind: str, dx: ErrorState):
        self.stats.record(kind, dx)
        if dx.accepted:
            self.state = apply_correction(self.state, dx)

    def update(self, time: float, v_dvl_d) -> List[Tuple[str, ErrorState]]:
        """
        处理一个 DVL 速度样本

        Returns:
            [(量测类型, ErrorState)], 按执行顺序
        """
        self.flush_covariance()
        self._push_window(time, v_dvl_d)
        results: List[Tuple[str, ErrorState]] = []
        for kind in self.cfg.update_order:
            if kind == "velocity":
                dx, self.P = velocity_update(self.state, self.P, v_dvl_d, self.cfg)
                self._correct(kind, dx)
                results.append((kind, dx))
            elif self.cfg.uses_acceleration and len(self._win_t) >= self.cfg.accel_window:
                window = VelocityWindow(np.array(self._win_t), np.vstack(self._win_v))
                span = float(np.sum(self._win_dt))
                f_mean = np.sum(self._win_f, axis=0) / span
                w_mean = np.sum(self._win_w, axis=0) / span
                dx, self.P = accel_update(self.state, self.P, extract_acceleration(window),
                                          f_mean, self.cfg, w_mean)
                self._correct(kind, dx)
                self._pop_window()
                results.append((kind, dx))
        return results

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.P), 0.0, None))
