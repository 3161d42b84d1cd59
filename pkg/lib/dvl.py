#!/usr/bin/env python3
"""
DVL
- 四波束几何与变换矩阵 H
- 波束级误差模型 (偏置, 刻度因子, 白噪声)
- 最小二乘速度反解
- 滑动窗口多项式拟合与加速度提取
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Union

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

DEFAULT_PITCH_DEG = 20.0
MAX_CONDITION = 1e12
MAX_SCALE_FACTOR = 0.1


class DvlGeometryError(ValueError):
    """波束几何退化"""
    pass


class WindowError(ValueError):
    """速度窗口不合法"""
    pass


class IllConditionedFitError(ValueError):
    """多项式拟合法方程病态"""
    pass


def beam_matrix(alpha: float) -> np.ndarray:
    """
    波束方向矩阵 H (4x3)

    Args:
        alpha: 波束俯仰角 (rad), 必须在 (0, π/2)

    Returns:
        第 i 行为 Janus 单位方向 [sin α cos ψ_i, sin α sin ψ_i, cos α],
        ψ_i = (i-1)·π/2 + π/4, α 为波束与 DVL z 轴夹角
    """
    if not (0.0 < alpha < math.pi / 2):
        raise DvlGeometryError(f"波束角必须在 (0, π/2) 内: {alpha}")
    psi = np.arange(4) * (math.pi / 2) + math.pi / 4
    sa = math.sin(alpha)
    return np.column_stack([sa * np.cos(psi), sa * np.sin(psi), np.full(4, math.cos(alpha))])


@dataclass
class DvlGeometry:
    pitch: float = math.radians(DEFAULT_PITCH_DEG)   # rad
    transmit_frequency: float = 600e3                 # Hz, 仅记录
    sound_speed: float = 1500.0                       # m/s, 仅记录
    H: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.H = beam_matrix(self.pitch)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DvlGeometry":
        return cls(
            pitch=math.radians(float(data.get("pitch_deg", DEFAULT_PITCH_DEG))),
            transmit_frequency=float(data.get("transmit_frequency", 600e3)),
            sound_speed=float(data.get("sound_speed", 1500.0)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pitch_deg": math.degrees(self.pitch),
            "transmit_frequency": self.transmit_frequency,
            "sound_speed": self.sound_speed,
        }

    def ls_covariance(self, sigma: float) -> np.ndarray:
        """白噪声 σ 下最小二乘速度的协方差 σ²(HᵀH)⁻¹"""
        return sigma ** 2 * np.linalg.inv(self.H.T @ self.H)


@dataclass
class DvlErrorModel:
    bias: np.ndarray = field(default_factory=lambda: np.zeros(4))   # m/s
    scale_factor: Union[float, np.ndarray] = 0.0                    # 标量或逐波束
    noise_std: float = 0.0                                          # m/s
    seed: Optional[int] = None

    def __post_init__(self):
        self.bias = np.asarray(self.bias, dtype=float).reshape(4)
        if np.ndim(self.scale_factor) > 0:
            self.scale_factor = np.asarray(self.scale_factor, dtype=float).reshape(4)
        else:
            self.scale_factor = float(self.scale_factor)
        if self.noise_std < 0:
            raise ValueError(f"噪声标准差不能为负: {self.noise_std}")
        if np.any(np.abs(self.scale_factor) >= MAX_SCALE_FACTOR):
            raise ValueError(f"刻度因子超出合理范围: {self.scale_factor}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DvlErrorModel":
        bias = data.get("bias", 0.0)
        if np.ndim(bias) == 0:
            bias = np.full(4, float(bias))
        return cls(
            bias=np.asarray(bias, dtype=float),
            scale_factor=data.get("scale_factor", 0.0),
            noise_std=float(data.get("noise_std", 0.0)),
            seed=data.get("seed"),
        )

    def to_dict(self) -> Dict[str, Any]:
        sf = self.scale_factor
        return {
            "bias": self.bias.tolist(),
            "scale_factor": sf.tolist() if isinstance(sf, np.ndarray) else sf,
            "noise_std": self.noise_std,
            "seed": self.seed,
        }


@dataclass
class DvlBeamSet:
    time: float
    y: np.ndarray       # 4 个波束速度 (m/s)


@dataclass
class VelocityWindow:
    """DVL 系速度样本窗口, 时间严格递增"""
    times: np.ndarray           # (m,)
    velocities: np.ndarray      # (m, 3)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 3)
        if len(self.times) != len(self.velocities):
            raise WindowError("时间与速度样本数不一致")
        if len(self.times) < 2:
            raise WindowError(f"窗口至少需要 2 个样本, 实际 {len(self.times)}")
        if np.any(np.diff(self.times) <= 0):
            raise WindowError("窗口时间戳必须严格递增")

    @property
    def size(self) -> int:
        return len(self.times)

    @property
    def newest_time(self) -> float:
        return float(self.times[-1])

    @property
    def deltas(self) -> np.ndarray:
        return self.times - self.times[0]


@dataclass
class PolyFit:
    coefficients: np.ndarray    # (n, 3): v_0, v̇_0, v̈_0, ...
    order: int
    t0: float

    @property
    def velocity(self) -> np.ndarray:
        return self.coefficients[0]

    @property
    def acceleration(self) -> np.ndarray:
        return self.coefficients[1] if self.order > 1 else np.zeros(3)

    def evaluate(self, t: float) -> np.ndarray:
        return taylor_row(t - self.t0, self.order) @ self.coefficients


def simulate_beams(v_b, geom: DvlGeometry, err: DvlErrorModel,
                   rng: Optional[np.random.Generator] = None,
                   time: float = 0.0) -> DvlBeamSet:
    """
    波束速度仿真 y = (1 + s)·H v + b + n

    Args:
        v_b: DVL 系真实速度
        geom: 波束几何
        err: 误差模型
        rng: 调用方持有的随机数发生器, 为空时按 err.seed 创建
        time: 时间戳
    """
    v_b = np.asarray(v_b, dtype=float)
    y = (1.0 + err.scale_factor) * (geom.H @ v_b) + err.bias
    if err.noise_std > 0:
        if rng is None:
            rng = np.random.default_rng(err.seed)
        y = y + err.noise_std * rng.standard_normal(4)
    return DvlBeamSet(time=time, y=y)


def _normal_factor(geom: DvlGeometry):
    try:
        return linalg.cho_factor(geom.H.T @ geom.H)
    except linalg.LinAlgError as e:
        raise DvlGeometryError(f"波束法方程奇异: {e}") from e


def ls_velocity(beams: DvlBeamSet, geom: DvlGeometry) -> np.ndarray:
    """最小二乘速度 (HᵀH)⁻¹Hᵀy"""
    return linalg.cho_solve(_normal_factor(geom), geom.H.T @ np.asarray(beams.y, dtype=float))


def ls_velocity_many(y: np.ndarray, geom: DvlGeometry) -> np.ndarray:
    """批量反解, y 形状 (N, 4), 返回 (N, 3)"""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    return linalg.cho_solve(_normal_factor(geom), geom.H.T @ y.T).T


def taylor_row(delta: float, order: int) -> np.ndarray:
    """泰勒设计行 [1, Δ, Δ²/2!, ..., Δ^(n-1)/(n-1)!]"""
    k = np.arange(order)
    return np.array([delta ** i / math.factorial(i) for i in k])


def taylor_design(deltas: np.ndarray, order: int) -> np.ndarray:
    return np.vstack([taylor_row(d, order) for d in deltas])


def moment_normal_matrix(deltas: np.ndarray, order: int) -> np.ndarray:
    """
    由时间矩直接构造的法方程矩阵 S

    s_ij = Σ_k Δ_k^(i+j) / (i! j!), i, j = 0..n-1, 与 LᵀL 相等
    """
    deltas = np.asarray(deltas, dtype=float)
    fact = np.array([math.factorial(i) for i in range(order)], dtype=float)
    moments = np.array([np.sum(deltas ** p) for p in range(2 * order - 1)])
    idx = np.add.outer(np.arange(order), np.arange(order))
    return moments[idx] / np.outer(fact, fact)


def moment_rhs(deltas: np.ndarray, velocities: np.ndarray, order: int) -> np.ndarray:
    """右端项, 第 i 行 Σ_k Δ_k^i / i! · v_k"""
    deltas = np.asarray(deltas, dtype=float)
    weights = np.vstack([deltas ** i / math.factorial(i) for i in range(order)])
    return weights @ np.asarray(velocities, dtype=float)


def fit_velocity_poly(window: VelocityWindow, order: int) -> PolyFit:
    """
    窗口速度的 n 项泰勒多项式最小二乘拟合

    Args:
        window: 速度窗口, 时间取相对最旧样本
        order: 多项式项数 n (2 = 速度 + 加速度)

    Returns:
        PolyFit, 系数按 v_0, v̇_0, v̈_0, ... 排列
    """
    if order < 1:
        raise WindowError(f"多项式阶数必须 >= 1: {order}")
    if window.size < order:
        raise WindowError(f"窗口长度 {window.size} 小于拟合阶数 {order}")
    deltas = window.deltas
    S = moment_normal_matrix(deltas, order)
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditionedFitError(
            f"法方程条件数 {cond:.3g} 过大, 请减小窗口或阶数"
        )
    coeffs = linalg.solve(S, moment_rhs(deltas, window.velocities, order), assume_a="pos")
    return PolyFit(coefficients=coeffs, order=order, t0=float(window.times[0]))


def extract_acceleration(window: VelocityWindow) -> np.ndarray:
    """
    窗口线性拟合斜率, 即 DVL 系加速度

    法方程 [[m, ΣΔ], [ΣΔ, ΣΔ²]], 结果视为窗口内常值, 标记在最新时刻
    """
    if window.size < 2:
        raise WindowError("加速度提取至少需要 2 个样本")
    d = window.deltas
    B = np.array([[window.size, d.sum()], [d.sum(), np.dot(d, d)]])
    rhs = np.vstack([window.velocities.sum(axis=0), d @ window.velocities])
    return linalg.solve(B, rhs)[1]


def slope_variance(sigma, m: int, period: float):
    """等间隔 m 个样本线性回归斜率的方差 σ²·12 / (T² m (m²-1))"""
    if m < 2:
        raise WindowError("窗口至少需要 2 个样本")
    return np.asarray(sigma, dtype=float) ** 2 * 12.0 / (period ** 2 * m * (m ** 2 - 1))
