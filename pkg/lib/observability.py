#!/usr/bin/env python3
"""
Observability
- 状态转移矩阵 (闭式积分 / 数值乘积)
- 可观测性 Gramian 右零空间
- 解析不可观子空间 U 与主角比较

分析采用简化设置: 导航系无转动项 (ωⁿ = 0).
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Optional

import numpy as np
from scipy import linalg
from scipy.integrate import cumulative_trapezoid

from lib.ekf import (
    BA,
    BG,
    DV,
    PHI,
    STATE_DIM,
    MisalignmentRate,
    acceleration_measurement_matrix,
    build_F,
    velocity_measurement_matrix,
)
from lib.frames import GeoContext, gravity_ned, skew
from lib.ins import NavState

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_EPOCHS = 512
ORTHONORMAL_TOLERANCE = 1e-10


class ObservabilityError(ValueError):
    """可观测性分析输入非法"""
    pass


@dataclass
class TrajectorySegment:
    """密集采样的轨迹片段 (IMU 频率), 只读"""
    times: np.ndarray               # (K,)
    attitude: np.ndarray            # (K, 3, 3) R_b^n
    specific_force_ned: np.ndarray  # (K, 3) fⁿ
    velocity: np.ndarray            # (K, 3)
    geo: GeoContext

    def __post_init__(self):
        if len(self.times) == 0:
            raise ObservabilityError("轨迹片段为空")

    @classmethod
    def static(cls, duration: float, dt: float = 0.01,
               geo: Optional[GeoContext] = None) -> "TrajectorySegment":
        """水平静止片段, R = I, fⁿ = -g"""
        geo = geo or GeoContext()
        n = int(round(duration / dt)) + 1
        times = np.arange(n) * dt
        return cls(
            times=times,
            attitude=np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
            specific_force_ned=np.tile(-gravity_ned(geo), (n, 1)),
            velocity=np.zeros((n, 3)),
            geo=geo,
        )

    @classmethod
    def from_truth(cls, truth, t_start: Optional[float] = None,
                   t_end: Optional[float] = None) -> "TrajectorySegment":
        """从 TruthTrajectory 截取 [t_start, t_end]"""
        t = truth.time
        lo = t[0] if t_start is None else t_start
        hi = t[-1] if t_end is None else t_end
        mask = (t >= lo - 1e-9) & (t <= hi + 1e-9)
        return cls(
            times=t[mask],
            attitude=truth.attitude[mask],
            specific_force_ned=truth.accel_ned[mask] - gravity_ned(truth.geo),
            velocity=truth.velocity[mask],
            geo=truth.geo,
        )

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def index_of(self, t: float) -> int:
        if t < self.t0 - 1e-9 or t > self.t_end + 1e-9:
            raise ObservabilityError(f"t={t} 不在片段 [{self.t0}, {self.t_end}] 内")
        k = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[k], t, rtol=0.0, atol=1e-6):
            raise ObservabilityError(f"t={t} 不在采样网格上")
        return k

    def nav_state(self, k: int) -> NavState:
        return NavState(time=float(self.times[k]), velocity=self.velocity[k],
                        attitude=self.attitude[k], geo=self.geo)

    @cached_property
    def _cumulative(self):
        """累积积分 R_s = ∫R, S_s = ∫[f×], M_s = -∫[f×]R_τ dτ"""
        fx = np.array([skew(f) for f in self.specific_force_ned])
        if len(self.times) == 1:
            zero = np.zeros((1, 3, 3))
            return zero, zero.copy(), zero.copy()
        R_int = cumulative_trapezoid(self.attitude, self.times, axis=0, initial=0)
        S_int = cumulative_trapezoid(fx, self.times, axis=0, initial=0)
        M_int = -cumulative_trapezoid(fx @ R_int, self.times, axis=0, initial=0)
        return R_int, S_int, M_int


@dataclass
class StmBlocks:
    R_t: np.ndarray
    S_t: np.ndarray
    M_t: np.ndarray
    phi: np.ndarray     # 12x12 Φ(t, t₀)


@dataclass
class SubspaceBasis:
    basis: np.ndarray   # (12, k), 列正交

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=float)
        self.basis = basis.reshape(STATE_DIM, 1) if basis.ndim == 1 else basis
        if self.basis.shape[0] != STATE_DIM:
            raise ObservabilityError(f"子空间基行数必须为 {STATE_DIM}: {self.basis.shape}")
        k = self.basis.shape[1]
        if k and np.max(np.abs(self.basis.T @ self.basis - np.eye(k))) > ORTHONORMAL_TOLERANCE:
            raise ObservabilityError("子空间基不正交")

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def residual(self, v) -> float:
        """v 到子空间的距离"""
        v = np.asarray(v, dtype=float)
        return float(np.linalg.norm(v - self.basis @ (self.basis.T @ v)))


def assemble_stm(R_t: np.ndarray, S_t: np.ndarray, M_t: np.ndarray) -> np.ndarray:
    Phi = np.eye(STATE_DIM)
    Phi[DV, PHI] = S_t
    Phi[DV, BA] = R_t
    Phi[DV, BG] = M_t
    Phi[PHI, BG] = -R_t
    return Phi


def stm_closed_form(segment: TrajectorySegment, t: float) -> StmBlocks:
    """
    闭式状态转移矩阵

    Φ = [[I, S_t, R_t, M_t], [0, I, 0, -R_t], [0, 0, I, 0], [0, 0, 0, I]]
    积分用梯形公式在片段采样点上计算
    """
    k = segment.index_of(t)
    R_int, S_int, M_int = segment._cumulative
    R_t, S_t, M_t = R_int[k], S_int[k], M_int[k]
    return StmBlocks(R_t=R_t, S_t=S_t, M_t=M_t, phi=assemble_stm(R_t, S_t, M_t))


def _system_matrix(segment: TrajectorySegment, k: int) -> np.ndarray:
    state = segment.nav_state(k)
    f_b = state.attitude.T @ segment.specific_force_ned[k]
    return build_F(state, f_b, np.zeros(3), MisalignmentRate.NONE, earth_rates=False)


def stm_numeric(segment: TrajectorySegment, t: float, method: str = "expm") -> np.ndarray:
    """
    数值状态转移矩阵, 区间平均 F 的有序乘积

    Args:
        method: "expm" 使用矩阵指数 (分段常值 F 精确), "first_order" 使用 I + F dt
    """
    if method not in ("expm", "first_order"):
        raise ObservabilityError(f"未知方法: {method}")
    k_end = segment.index_of(t)
    Phi = np.eye(STATE_DIM)
    F_prev = _system_matrix(segment, 0)
    for k in range(k_end):
        F_next = _system_matrix(segment, k + 1)
        dt = segment.times[k + 1] - segment.times[k]
        F_bar = 0.5 * (F_prev + F_next)
        step = linalg.expm(F_bar * dt) if method == "expm" else np.eye(STATE_DIM) + F_bar * dt
        Phi = step @ Phi
        F_prev = F_next
    return Phi


HBuilder = Callable[[TrajectorySegment, int], np.ndarray]


def velocity_rows(segment: TrajectorySegment, k: int) -> np.ndarray:
    R = segment.attitude[k]
    return velocity_measurement_matrix(R, segment.velocity[k])


def acceleration_only_rows(segment: TrajectorySegment, k: int) -> np.ndarray:
    return acceleration_measurement_matrix(segment.attitude[k], gravity_ned(segment.geo))


def acceleration_rows(segment: TrajectorySegment, k: int) -> np.ndarray:
    """速度 + 加速度量测组合"""
    return np.vstack([velocity_rows(segment, k), acceleration_only_rows(segment, k)])


def full_state_rows(segment: TrajectorySegment, k: int) -> np.ndarray:
    return np.eye(STATE_DIM)


MEASUREMENT_MODELS: Dict[str, HBuilder] = {
    "velocity": velocity_rows,
    "acceleration": acceleration_rows,
    "acceleration_only": acceleration_only_rows,
    "full_state": full_state_rows,
}


def observability_matrix(segment: TrajectorySegment, h_builder: HBuilder,
                         epoch_spacing: float = 1.0,
                         max_epochs: int = DEFAULT_MAX_EPOCHS) -> np.ndarray:
    """按量测时刻堆叠 H(t_k) Φ(t_k, t₀)"""
    step = max(1, int(round(epoch_spacing / np.median(np.diff(segment.times))))) \
        if len(segment.times) > 1 else 1
    indices = list(range(0, len(segment.times), step))[:max_epochs]
    rows = []
    for k in indices:
        Phi = stm_closed_form(segment, float(segment.times[k])).phi
        rows.append(h_builder(segment, k) @ Phi)
    return np.vstack(rows)


def gramian_nullspace(segment: TrajectorySegment, h_builder: HBuilder,
                      tol: float = DEFAULT_TOLERANCE, epoch_spacing: float = 1.0,
                      max_epochs: int = DEFAULT_MAX_EPOCHS) -> SubspaceBasis:
    """
    Gramian 右零空间

    Args:
        segment: 轨迹片段
        h_builder: (segment, k) -> H 的量测模型
        tol: 相对奇异值门限 (相对 σ_max)
        epoch_spacing: 量测时刻间隔 (s)
        max_epochs: 最多堆叠的时刻数

    Returns:
        正交基 SubspaceBasis
    """
    O = observability_matrix(segment, h_builder, epoch_spacing, max_epochs)
    basis = linalg.null_space(O, rcond=tol)
    logger.info(f"Gramian 零空间维数: {basis.shape[1]} (堆叠 {O.shape[0]} 行)")
    return SubspaceBasis(basis)


def analytic_U(g) -> SubspaceBasis:
    """
    解析不可观子空间

    行向量 [0 … 0 1] (航向陀螺零偏) 与 [0, I₃, -[g×], 0], 转置后正交化
    """
    g = np.asarray(g, dtype=float)
    if np.linalg.norm(g) <= 0:
        raise ObservabilityError("重力向量不能为零")
    U = np.zeros((4, STATE_DIM))
    U[0, STATE_DIM - 1] = 1.0
    U[1:4, PHI] = np.eye(3)
    U[1:4, BA] = -skew(g)
    return SubspaceBasis(linalg.orth(U.T))


def principal_angles(A: SubspaceBasis, B: SubspaceBasis) -> np.ndarray:
    if A.dim == 0 or B.dim == 0:
        raise ObservabilityError("子空间为空, 无法计算主角")
    if A.basis.shape[0] != B.basis.shape[0]:
        raise ObservabilityError("子空间所在空间维数不一致")
    return linalg.subspace_angles(A.basis, B.basis)


def subspace_angle(A: SubspaceBasis, B: SubspaceBasis) -> float:
    """最大主角 (rad), 0 当且仅当张成空间相同; 维数不同时返回 π/2"""
    angles = principal_angles(A, B)
    if A.dim != B.dim:
        return float(np.pi / 2)
    return float(np.max(angles))
