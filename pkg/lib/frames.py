#!/usr/bin/env python3
"""
Frames
- 坐标系约定 (NED 导航系, 载体系, DVL 系)
- 旋转工具 (反对称矩阵, 欧拉角, 指数/对数映射)
- 重力与地球自转/转移角速度模型
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
from scipy.spatial.transform import Rotation

logger = logging.getLogger(__name__)

OMEGA_EARTH = 7.292115e-5       # rad/s
EARTH_RADIUS = 6378137.0        # m, 球形地球
DEFAULT_GRAVITY = 9.80665       # m/s²
GRAVITY_RANGE = (9.7, 9.9)
ROTATION_TOLERANCE = 1e-9

# 显示单位换算
MILLI_G = DEFAULT_GRAVITY * 1e-3            # m/s² per mg
DEG_PER_HOUR = math.radians(1.0) / 3600.0   # rad/s per °/h
MILLIRAD = 1e-3


@dataclass(frozen=True)
class GeoContext:
    """重力与地球角速度的求值位置"""
    latitude: float = 0.0                 # rad
    depth: float = 0.0                    # m, 向下为正
    gravity: float = DEFAULT_GRAVITY      # m/s²

    def __post_init__(self):
        if not math.isfinite(self.latitude) or abs(self.latitude) > math.pi / 2:
            raise ValueError(f"纬度超出范围: {self.latitude}")
        lo, hi = GRAVITY_RANGE
        if not lo <= self.gravity <= hi:
            raise ValueError(f"重力大小超出范围 [{lo}, {hi}]: {self.gravity}")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GeoContext":
        """从配置字典创建 (纬度单位为度)"""
        return cls(
            latitude=math.radians(float(data.get("latitude_deg", 0.0))),
            depth=float(data.get("depth", 0.0)),
            gravity=float(data.get("gravity", DEFAULT_GRAVITY)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "latitude_deg": math.degrees(self.latitude),
            "depth": self.depth,
            "gravity": self.gravity,
        }


def skew(v) -> np.ndarray:
    """
    反对称矩阵 [v×]

    Args:
        v: 3 维向量

    Returns:
        3x3 矩阵 A, 满足 A @ w == v × w
    """
    x, y, z = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def dcm_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """载体系到 NED 的方向余弦矩阵 R_b^n, ZYX (航向-俯仰-横滚) 顺序"""
    return Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()


def yaw_from_dcm(R: np.ndarray) -> float:
    return float(math.atan2(R[1, 0], R[0, 0]))


def so3_exp(phi) -> np.ndarray:
    """旋转向量 → 旋转矩阵 exp([φ×])"""
    return Rotation.from_rotvec(np.asarray(phi, dtype=float)).as_matrix()


def so3_log(R: np.ndarray) -> np.ndarray:
    """旋转矩阵 → 旋转向量"""
    return Rotation.from_matrix(R).as_rotvec()


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """SVD 投影回 SO(3)"""
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U[:, -1] = -U[:, -1]
        out = U @ Vt
    return out


def is_rotation(R: np.ndarray, tol: float = ROTATION_TOLERANCE) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return (np.linalg.norm(R.T @ R - np.eye(3)) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


def gravity_ned(ctx: GeoContext) -> np.ndarray:
    """NED 重力向量 [0, 0, +g] (常值模型)"""
    return np.array([0.0, 0.0, ctx.gravity])


def earth_rate_ned(ctx: GeoContext) -> np.ndarray:
    """地球自转角速度 ω_ie^n"""
    return OMEGA_EARTH * np.array([
        math.cos(ctx.latitude), 0.0, -math.sin(ctx.latitude)
    ])


def transport_rate_ned(v, ctx: GeoContext) -> np.ndarray:
    """
    转移角速度 ω_en^n (球形地球)

    Args:
        v: NED 速度 (m/s), 可为 (..., 3)
        ctx: 位置上下文, 高度取 -depth

    Returns:
        3 维角速度 (rad/s)
    """
    v = np.asarray(v, dtype=float)
    v_n, v_e = v[..., 0], v[..., 1]
    r = EARTH_RADIUS - ctx.depth
    return np.stack([v_e / r, -v_n / r, -v_e * math.tan(ctx.latitude) / r], axis=-1)
