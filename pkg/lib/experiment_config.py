#!/usr/bin/env python3
"""
Experiment Config
- 读取实验 YAML (轨迹, 传感器误差, DVL, 滤波器, 报告)
- 未知键校验
- 命令行覆盖 (seed / out / mode)
"""

import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from lib.dvl import DvlGeometry
from lib.ekf import FilterConfig, UpdateMode
from lib.frames import GeoContext, dcm_from_euler
from lib.sensors import SensorErrorBudget
from lib.trajectory import TRAJECTORY_BUILDERS, TruthTrajectory, build_trajectory

logger = logging.getLogger(__name__)

MODES = ("baseline", "accel", "both")
AVERAGE_POLICIES = ("exclude", "include_zero")

ALLOWED_KEYS: Dict[str, set] = {
    "": {"experiment", "trajectory", "geo", "sensors", "dvl", "filter", "report",
         "rmse_sweep", "observability"},
    "experiment": {"name", "seed", "output_dir", "n_runs", "n_jobs", "mode"},
    "trajectory": {"kind", "params"},
    "geo": {"latitude_deg", "depth", "gravity"},
    "sensors": {"accel_bias_mg", "gyro_bias_dph", "accel_noise_density", "gyro_noise_density",
                "accel_bias_rw", "gyro_bias_rw", "random_biases", "imu_rate", "dvl_rate", "dvl"},
    "sensors.dvl": {"bias", "scale_factor", "noise_std", "seed"},
    "dvl": {"pitch_deg", "transmit_frequency", "sound_speed", "mounting_euler_deg"},
    "filter": {"accel_noise_density", "gyro_noise_density", "accel_bias_rw", "gyro_bias_rw",
               "velocity_noise_std", "acceleration_noise_std", "initial_sigma",
               "accel_window", "overlapping_windows", "acc_noise_inflation", "gate_probability",
               "update_order", "misalignment_rate", "velocity_jacobian", "earth_rates",
               "rotating_frame_compensation", "covariance_substeps", "max_dvl_speed"},
    "filter.initial_sigma": {"velocity_mps", "roll_pitch_mrad", "heading_mrad",
                             "accel_bias_mg", "gyro_bias_dph"},
    "report": {"average_policy", "unobservable_states", "divergence_warning_fraction"},
    "rmse_sweep": {"n_min", "n_max"},
    "observability": {"tol", "max_epochs", "epoch_spacing", "static_duration",
                      "maneuver_start", "maneuver_end"},
}


class ConfigError(ValueError):
    """实验配置错误"""
    pass


@dataclass
class ReportSettings:
    average_policy: str = "exclude"
    unobservable_states: List[str] = field(default_factory=lambda: ["phi_d", "bg_z"])
    divergence_warning_fraction: float = 0.1


@dataclass
class RmseSettings:
    n_min: int = 2
    n_max: int = 10

    @property
    def n_range(self) -> List[int]:
        return list(range(self.n_min, self.n_max + 1))


@dataclass
class ObservabilitySettings:
    tol: float = 1e-8
    max_epochs: int = 512
    epoch_spacing: float = 1.0
    static_duration: float = 60.0
    maneuver_start: Optional[float] = None
    maneuver_end: Optional[float] = None


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    output_dir: str = "output"
    n_runs: int = 100
    n_jobs: int = -1
    mode: str = "both"
    trajectory_kind: str = "straight"
    trajectory_params: Dict[str, Any] = field(default_factory=lambda: {"duration": 424.0, "speed": 2.0})
    geo: GeoContext = field(default_factory=GeoContext)
    sensors: SensorErrorBudget = field(default_factory=SensorErrorBudget)
    geometry: DvlGeometry = field(default_factory=DvlGeometry)
    dvl_to_body: np.ndarray = field(default_factory=lambda: np.eye(3))
    filter: FilterConfig = field(default_factory=FilterConfig)
    report: ReportSettings = field(default_factory=ReportSettings)
    rmse: RmseSettings = field(default_factory=RmseSettings)
    observability: ObservabilitySettings = field(default_factory=ObservabilitySettings)
    source_path: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"experiment.mode 必须是 {MODES} 之一: {self.mode}")
        if self.n_runs < 1:
            raise ConfigError(f"experiment.n_runs 必须 >= 1: {self.n_runs}")
        if self.trajectory_kind not in TRAJECTORY_BUILDERS:
            raise ConfigError(f"trajectory.kind 未知: {self.trajectory_kind}")
        if self.report.average_policy not in AVERAGE_POLICIES:
            raise ConfigError(f"report.average_policy 必须是 {AVERAGE_POLICIES} 之一")
        if not 2 <= self.rmse.n_min <= self.rmse.n_max <= 20:
            raise ConfigError("rmse_sweep 范围必须满足 2 <= n_min <= n_max <= 20")

    @property
    def update_modes(self) -> List[UpdateMode]:
        if self.mode == "both":
            return [UpdateMode.BASELINE, UpdateMode.ACCEL]
        return [UpdateMode(self.mode)]

    def filter_config(self, mode: UpdateMode) -> FilterConfig:
        return replace(self.filter, mode=mode)

    def build_truth(self) -> TruthTrajectory:
        return build_trajectory(self.trajectory_kind, self.trajectory_params,
                                dt=1.0 / self.sensors.imu_rate, geo=self.geo)

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None,
                       mode: Optional[str] = None) -> "ExperimentConfig":
        """命令行参数覆盖配置文件"""
        changes: Dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if output_dir is not None:
            changes["output_dir"] = output_dir
        if mode is not None:
            changes["mode"] = mode
        return replace(self, **changes) if changes else self

    def summary(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "mode": self.mode,
            "n_runs": self.n_runs,
            "trajectory": {"kind": self.trajectory_kind, "params": self.trajectory_params},
            "geo": self.geo.to_dict(),
            "sensors": self.sensors.to_dict(),
            "dvl": self.geometry.to_dict(),
        }


def check_keys(data: Dict[str, Any], section: str):
    """未知键立即报错, 错误信息带完整键路径"""
    if not isinstance(data, dict):
        raise ConfigError(f"{section or '顶层'}: 必须是对象")
    allowed = ALLOWED_KEYS[section]
    for key in data:
        if key not in allowed:
            path = f"{section}.{key}" if section else key
            raise ConfigError(f"未知配置项: {path}")


def parse_config(data: Dict[str, Any], source_path: Optional[str] = None) -> ExperimentConfig:
    """
    将 YAML 字典解析为 ExperimentConfig

    Args:
        data: yaml.safe_load 的结果
        source_path: 配置文件路径 (用于日志与 manifest)

    Returns:
        ExperimentConfig

    Raises:
        ConfigError: 结构或取值不合法
    """
    check_keys(data, "")
    sections = {}
    for name in ALLOWED_KEYS[""]:
        sec = data.get(name) or {}
        check_keys(sec, name)
        sections[name] = sec
    if "dvl" in sections["sensors"]:
        check_keys(sections["sensors"]["dvl"] or {}, "sensors.dvl")
    if "initial_sigma" in sections["filter"]:
        check_keys(sections["filter"]["initial_sigma"] or {}, "filter.initial_sigma")

    try:
        exp = sections["experiment"]
        traj = sections["trajectory"]
        geo = GeoContext.from_dict(sections["geo"])
        sensors = SensorErrorBudget.from_dict(sections["sensors"])
        dvl_sec = sections["dvl"]
        geometry = DvlGeometry.from_dict(dvl_sec)
        mounting = dvl_sec.get("mounting_euler_deg", [0.0, 0.0, 0.0])
        roll, pitch, yaw = (math.radians(float(a)) for a in mounting)
        dvl_to_body = dcm_from_euler(roll, pitch, yaw)
        filt = FilterConfig.from_dict(
            sections["filter"],
            vel_noise_cov=geometry.ls_covariance(max(sensors.dvl.noise_std, 1e-6)),
            dvl_period=1.0 / sensors.dvl_rate,
            dvl_to_body=dvl_to_body,
        )
        rep = sections["report"]
        report = ReportSettings(
            average_policy=rep.get("average_policy", "exclude"),
            unobservable_states=list(rep.get("unobservable_states", ["phi_d", "bg_z"])),
            divergence_warning_fraction=float(rep.get("divergence_warning_fraction", 0.1)),
        )
        rm = sections["rmse_sweep"]
        rmse = RmseSettings(n_min=int(rm.get("n_min", 2)), n_max=int(rm.get("n_max", 10)))
        obs = sections["observability"]
        observability = ObservabilitySettings(
            tol=float(obs.get("tol", 1e-8)),
            max_epochs=int(obs.get("max_epochs", 512)),
            epoch_spacing=float(obs.get("epoch_spacing", 1.0)),
            static_duration=float(obs.get("static_duration", 60.0)),
            maneuver_start=obs.get("maneuver_start"),
            maneuver_end=obs.get("maneuver_end"),
        )
        return ExperimentConfig(
            name=str(exp.get("name", "experiment")),
            seed=int(exp.get("seed", 0)),
            output_dir=str(exp.get("output_dir", "output")),
            n_runs=int(exp.get("n_runs", 100)),
            n_jobs=int(exp.get("n_jobs", -1)),
            mode=str(exp.get("mode", "both")),
            trajectory_kind=str(traj.get("kind", "straight")),
            trajectory_params=dict(traj.get("params") or {}),
            geo=geo,
            sensors=sensors,
            geometry=geometry,
            dvl_to_body=dvl_to_body,
            filter=filt,
            report=report,
            rmse=rmse,
            observability=observability,
            source_path=source_path,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"配置取值非法: {e}") from e


def load_experiment_config(path: str) -> ExperimentConfig:
    """
    加载实验配置文件

    Args:
        path: YAML 文件路径

    Returns:
        ExperimentConfig

    Raises:
        ConfigError: 文件不存在, 无法解析或内容非法
    """
    if not os.path.exists(path):
        raise ConfigError(f"配置文件不存在: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"解析配置文件失败: {e}") from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: 顶层必须是对象")
    config = parse_config(data, source_path=path)
    logger.info(f"加载实验配置 {config.name} 从 {path}")
    return config
