#!/usr/bin/env python3
"""
测试 EKF 模块
- 系统矩阵与量测矩阵 (与小误差数值差分对照)
- Joseph 更新, 门限拒绝
- 闭环校正与发散检测
- NavigationFilter 更新节奏
"""

import math
import os
import sys
import unittest
from dataclasses import replace

import numpy as np

# 添加 lib 到 path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from lib.dvl import DvlGeometry, ls_velocity_many
from lib.ekf import (
    BA,
    BG,
    DV,
    PHI,
    STATE_DIM,
    ErrorState,
    FilterConfig,
    FilterDivergenceError,
    MisalignmentRate,
    NavigationFilter,
    UpdateMode,
    UpdateStats,
    VelocityJacobian,
    accel_update,
    acceleration_measurement_matrix,
    apply_correction,
    build_F,
    is_valid_covariance,
    kalman_update,
    predict,
    predicted_body_acceleration,
    velocity_measurement_matrix,
    velocity_update,
)
from lib.frames import GeoContext, MILLI_G, MILLIRAD, dcm_from_euler, gravity_ned, skew, so3_exp
from lib.ins import NavState
from lib.sensors import SensorErrorBudget, synth_dvl, synth_imu
from lib.trajectory import gen_static, gen_straight


def perturbed(truth: NavState, dx: np.ndarray) -> NavState:
    """按 δv = v̂ - v, R = exp([φ×])R̂, δb = b - b̂ 构造估计状态"""
    return NavState(
        time=truth.time,
        velocity=truth.velocity + dx[DV],
        attitude=so3_exp(-dx[PHI]) @ truth.attitude,
        geo=truth.geo,
        accel_bias=truth.accel_bias - dx[BA],
        gyro_bias=truth.gyro_bias - dx[BG],
    )


class TestSystemMatrix(unittest.TestCase):
    """测试系统矩阵"""

    def setUp(self):
        self.state = NavState(time=0.0, velocity=np.array([1.0, 0.5, 0.0]),
                              attitude=dcm_from_euler(0.01, -0.02, 1.0),
                              geo=GeoContext(latitude=0.5))
        self.f = np.array([0.1, -0.2, -9.8])
        self.w = np.array([0.0, 0.0, 0.05])

    def test_blocks(self):
        """F 各块位置与符号"""
        F = build_F(self.state, self.f, self.w)
        R = self.state.attitude
        np.testing.assert_allclose(F[DV, PHI], skew(R @ self.f))
        np.testing.assert_allclose(F[DV, BA], R)
        np.testing.assert_allclose(F[PHI, BG], -R)
        np.testing.assert_array_equal(F[BA], 0.0)
        np.testing.assert_array_equal(F[BG], 0.0)

    def test_misalignment_rate_options(self):
        """ωⁿ 三种取法"""
        R = self.state.attitude
        F_gyro = build_F(self.state, self.f, self.w, MisalignmentRate.GYRO)
        np.testing.assert_allclose(F_gyro[PHI, PHI], skew(R @ self.w))
        F_none = build_F(self.state, self.f, self.w, MisalignmentRate.NONE)
        np.testing.assert_array_equal(F_none[PHI, PHI], 0.0)
        F_nav = build_F(self.state, self.f, self.w, MisalignmentRate.NAVIGATION, earth_rates=False)
        np.testing.assert_array_equal(F_nav[PHI, PHI], 0.0)

    def test_predict_keeps_covariance_valid(self):
        """预测后协方差对称半正定"""
        cfg = FilterConfig()
        P = cfg.initial_covariance()
        F = build_F(self.state, self.f, self.w)
        for _ in range(500):
            P = predict(P, F, cfg, 0.1, self.state.attitude)
        self.assertTrue(is_valid_covariance(P))
        self.assertGreater(P[0, 0], cfg.initial_covariance()[0, 0])

    def test_predict_rejects_bad_dt(self):
        """非正步长报错"""
        cfg = FilterConfig()
        with self.assertRaises(ValueError):
            predict(cfg.initial_covariance(), np.zeros((STATE_DIM, STATE_DIM)), cfg, 0.0)


class TestMeasurementModels(unittest.TestCase):
    """测试量测模型与小误差线性化一致"""

    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.truth = NavState(time=0.0, velocity=np.array([1.2, -0.4, 0.1]),
                              attitude=dcm_from_euler(0.03, -0.05, 2.0),
                              geo=GeoContext(latitude=0.6),
                              accel_bias=np.array([0.01, -0.005, 0.002]),
                              gyro_bias=np.array([1e-5, -2e-5, 3e-5]))
        self.cfg = FilterConfig(rotating_frame_compensation=False, earth_rates=False)

    def _small_error(self, scale=1e-5):
        return scale * self.rng.normal(size=STATE_DIM)

    def test_velocity_residual_linearization(self):
        """速度残差 ≈ H_v δx"""
        v_d = self.truth.attitude.T @ self.truth.velocity
        for _ in range(10):
            dx = self._small_error()
            est = perturbed(self.truth, dx)
            dz = est.attitude.T @ est.velocity - v_d
            H = velocity_measurement_matrix(est.attitude, est.attitude @ v_d)
            np.testing.assert_allclose(dz, H @ dx, atol=1e-9)

    def test_acceleration_residual_linearization(self):
        """加速度残差 ≈ H_a δx"""
        f_true = np.array([0.2, -0.1, -9.7])
        a_true = f_true + self.truth.attitude.T @ gravity_ned(self.truth.geo)
        f_meas = f_true + self.truth.accel_bias
        for _ in range(10):
            dx = self._small_error()
            est = perturbed(self.truth, dx)
            dz = predicted_body_acceleration(est, f_meas, self.cfg) - a_true
            H = acceleration_measurement_matrix(est.attitude, gravity_ned(est.geo))
            np.testing.assert_allclose(dz, H @ dx, atol=1e-8)

    def test_velocity_update_rejects_implausible_speed(self):
        """超速 DVL 样本被丢弃"""
        P = self.cfg.initial_covariance()
        dx, P_new = velocity_update(self.truth, P, [50.0, 0.0, 0.0], self.cfg)
        self.assertFalse(dx.accepted)
        self.assertIs(P_new, P)

    def test_accel_update_reduces_tilt_uncertainty(self):
        """加速度更新降低水平姿态与零偏方差"""
        P = self.cfg.initial_covariance()
        a = np.zeros(3)
        f = -self.truth.attitude.T @ gravity_ned(self.truth.geo) + self.truth.accel_bias
        est = NavState(time=0.0, velocity=self.truth.velocity, attitude=self.truth.attitude,
                       geo=self.truth.geo, accel_bias=self.truth.accel_bias)
        dx, P_new = accel_update(est, P, a, f, self.cfg)
        self.assertTrue(dx.accepted)
        self.assertLess(P_new[3, 3], P[3, 3])
        self.assertLess(P_new[6, 6], P[6, 6])
        self.assertAlmostEqual(P_new[5, 5] / P[5, 5], 1.0, places=1)

    def test_velocity_jacobian_linearization_point(self):
        """H_v 默认在先验速度处线性化, 可切换为量测速度"""
        state = NavState(time=0.0, velocity=np.array([0.2, 0.0, 0.0]), attitude=np.eye(3),
                         geo=GeoContext())
        v_meas = np.array([0.15, 0.03, 0.0])
        P = self.cfg.initial_covariance()
        R = self.cfg.vel_noise_cov
        dz = state.velocity - v_meas
        for choice, v_lin in ((VelocityJacobian.ESTIMATE, state.velocity),
                              (VelocityJacobian.MEASUREMENT, v_meas)):
            cfg = FilterConfig(rotating_frame_compensation=False, earth_rates=False,
                               velocity_jacobian=choice)
            dx, P_new = velocity_update(state, P, v_meas, cfg)
            _, P_ref, _, _ = kalman_update(P, velocity_measurement_matrix(np.eye(3), v_lin), dz, R)
            self.assertTrue(dx.accepted)
            np.testing.assert_allclose(P_new, P_ref, atol=1e-15)
        cfg = FilterConfig.from_dict({"velocity_jacobian": "measurement"})
        self.assertIs(cfg.velocity_jacobian, VelocityJacobian.MEASUREMENT)
        self.assertIs(FilterConfig().velocity_jacobian, VelocityJacobian.ESTIMATE)


class TestKalmanUpdate(unittest.TestCase):
    """测试量测更新"""

    def setUp(self):
        rng = np.random.default_rng(1)
        A = rng.normal(size=(STATE_DIM, STATE_DIM))
        self.P = A @ A.T + np.eye(STATE_DIM)
        self.H = rng.normal(size=(3, STATE_DIM))
        self.R = 0.1 * np.eye(3)

    def test_joseph_equals_standard_form(self):
        """最优增益下 Joseph 形式等于 (I - KH)P"""
        dz = np.array([0.1, -0.2, 0.05])
        _, P_new, _, ok = kalman_update(self.P, self.H, dz, self.R)
        S = self.H @ self.P @ self.H.T + self.R
        K = self.P @ self.H.T @ np.linalg.inv(S)
        np.testing.assert_allclose(P_new, (np.eye(STATE_DIM) - K @ self.H) @ self.P,
                                   rtol=1e-8, atol=1e-9)
        self.assertTrue(ok)
        self.assertTrue(is_valid_covariance(P_new))

    def test_gate_rejects_outlier(self):
        """NIS 超过门限时拒绝, P 不变"""
        dz = np.array([1000.0, -1000.0, 1000.0])
        dx, P_new, nis, ok = kalman_update(self.P, self.H, dz, self.R, gate=16.27)
        self.assertFalse(ok)
        self.assertGreater(nis, 16.27)
        np.testing.assert_array_equal(dx, 0.0)
        self.assertIs(P_new, self.P)


class TestCorrection(unittest.TestCase):
    """测试闭环校正"""

    def test_true_error_restores_truth(self):
        """以真实误差校正后恢复真值"""
        truth = NavState(time=0.0, velocity=np.array([1.0, 0.0, 0.0]),
                         attitude=dcm_from_euler(0.0, 0.0, 0.3),
                         accel_bias=np.array([0.01, 0.0, 0.0]), gyro_bias=np.zeros(3))
        dx = np.concatenate([[0.1, -0.1, 0.0], [0.01, 0.02, -0.03], [1e-3] * 3, [1e-5] * 3])
        fixed = apply_correction(perturbed(truth, dx), ErrorState(vector=dx))
        np.testing.assert_allclose(fixed.velocity, truth.velocity, atol=1e-15)
        np.testing.assert_allclose(fixed.attitude, truth.attitude, atol=1e-14)
        np.testing.assert_allclose(fixed.accel_bias, truth.accel_bias, atol=1e-15)
        np.testing.assert_allclose(fixed.gyro_bias, truth.gyro_bias, atol=1e-18)

    def test_zero_correction_is_identity(self):
        """零校正不改变状态"""
        state = NavState(time=1.0, velocity=np.ones(3), attitude=dcm_from_euler(0.1, 0.2, 0.3))
        out = apply_correction(state, ErrorState.zeros())
        np.testing.assert_allclose(out.velocity, state.velocity)
        np.testing.assert_allclose(out.attitude, state.attitude, atol=1e-15)

    def test_large_misalignment_diverges(self):
        """‖φ‖ >= 0.5 rad 报发散"""
        vec = np.zeros(STATE_DIM)
        vec[PHI] = [0.0, 0.0, 0.6]
        state = NavState(time=0.0, velocity=np.zeros(3), attitude=np.eye(3))
        with self.assertRaises(FilterDivergenceError):
            apply_correction(state, ErrorState(vector=vec))


class TestFilterConfig(unittest.TestCase):
    """测试滤波配置"""

    def test_default_acceleration_noise(self):
        """m = 3, T = 1 s, 膨胀 2 时加速度噪声等于速度噪声"""
        cfg = FilterConfig()
        np.testing.assert_allclose(cfg.acc_noise_cov, cfg.vel_noise_cov)

    def test_from_dict_units(self):
        """初始 σ 以 mrad / mg 给出"""
        cfg = FilterConfig.from_dict({
            "initial_sigma": {"roll_pitch_mrad": 5.0, "heading_mrad": 20.0, "accel_bias_mg": 2.0},
            "velocity_noise_std": 0.01,
            "mode": "baseline",
        })
        np.testing.assert_allclose(cfg.init_attitude_sigma, np.array([5.0, 5.0, 20.0]) * MILLIRAD)
        self.assertAlmostEqual(cfg.init_accel_bias_sigma, 2.0 * MILLI_G)
        np.testing.assert_allclose(cfg.vel_noise_cov, 1e-4 * np.eye(3))
        self.assertIs(cfg.mode, UpdateMode.BASELINE)
        self.assertFalse(cfg.uses_acceleration)

    def test_invalid_update_order(self):
        """update_order 必须是两种量测的排列"""
        with self.assertRaises(ValueError):
            FilterConfig(update_order=("velocity", "velocity"))

    def test_gate_threshold(self):
        """χ²(3) 0.999 分位数"""
        self.assertAlmostEqual(FilterConfig().gate_threshold(3), 16.266, places=2)
        self.assertIsNone(FilterConfig(gate_probability=None).gate_threshold(3))


class TestNavigationFilter(unittest.TestCase):
    """测试滤波器驱动类"""

    def _run(self, cfg: FilterConfig, seconds: float = 9.0):
        truth = gen_static(seconds, geo=GeoContext(latitude=math.radians(30.0)))
        budget = SensorErrorBudget.zero()
        imu = synth_imu(truth, budget, seed=0)
        dvl = synth_dvl(truth, budget, seed=0)
        v_dvl = ls_velocity_many(dvl.beams, DvlGeometry())
        filt = NavigationFilter(truth.nav_state(0), cfg)
        j = 0
        for k in range(len(imu)):
            filt.propagate(imu.sample(k))
            if j < len(dvl) and dvl.truth_index[j] == k + 1:
                filt.update(float(dvl.time[j]), v_dvl[j])
                j += 1
        return filt, truth

    def test_update_stats_mean_nis(self):
        """平均 NIS 只统计被接受的更新"""
        stats = UpdateStats()
        self.assertIsNone(stats.mean_nis("velocity"))
        stats.record("velocity", ErrorState(nis=2.0))
        stats.record("velocity", ErrorState(nis=4.0))
        stats.record("velocity", ErrorState.rejected(nis=50.0))
        stats.record("acceleration", ErrorState(nis=1.5))
        self.assertAlmostEqual(stats.mean_nis("velocity"), 3.0)
        self.assertAlmostEqual(stats.mean_nis("acceleration"), 1.5)
        self.assertEqual(stats.velocity_rejected, 1)

    def test_non_overlapping_windows(self):
        """不重叠窗口: 每 3 个 DVL 样本一次加速度更新"""
        filt, _ = self._run(FilterConfig())
        self.assertEqual(filt.stats.velocity_accepted, 9)
        self.assertEqual(filt.stats.accel_accepted, 3)

    def test_overlapping_windows(self):
        """重叠窗口: 窗口满后每个 DVL 样本都更新"""
        filt, _ = self._run(FilterConfig(overlapping_windows=True))
        self.assertEqual(filt.stats.accel_accepted, 7)

    def test_baseline_has_no_accel_updates(self):
        """基线模式只做速度更新"""
        filt, _ = self._run(FilterConfig(mode=UpdateMode.BASELINE))
        self.assertEqual(filt.stats.accel_accepted + filt.stats.accel_rejected, 0)

    def test_noise_free_stays_on_truth(self):
        """无误差数据下估计保持在真值"""
        filt, truth = self._run(FilterConfig())
        final = truth.nav_state(len(truth.time) - 1)
        np.testing.assert_allclose(filt.state.velocity, final.velocity, atol=1e-8)
        np.testing.assert_allclose(filt.state.attitude, final.attitude, atol=1e-8)
        self.assertTrue(is_valid_covariance(filt.P))
        self.assertLess(filt.sigma[0], FilterConfig().init_velocity_sigma)

class TestBatchPropagation(unittest.TestCase):
    """测试批量递推与航向信息"""

    def setUp(self):
        self.truth = gen_straight(120.0, 0.1667, heading=0.8,
                                  geo=GeoContext(latitude=math.radians(32.8)))
        budget = SensorErrorBudget()
        self.imu = synth_imu(self.truth, budget, seed=1)
        self.dvl = synth_dvl(self.truth, budget, seed=2)
        self.v_dvl = ls_velocity_many(self.dvl.beams, DvlGeometry())

    def _run(self, cfg: FilterConfig, batched: bool = True, updates: bool = True,
             seconds: float = 120.0) -> NavigationFilter:
        filt = NavigationFilter(self.truth.nav_state(0), cfg)
        k0 = 0
        for j, k in enumerate(self.dvl.truth_index):
            if self.dvl.time[j] > seconds:
                break
            if batched:
                filt.propagate_many(self.imu.time[k0:k], self.imu.specific_force[k0:k],
                                    self.imu.angular_rate[k0:k])
            else:
                for i in range(k0, k):
                    filt.propagate(self.imu.sample(i))
            k0 = k
            if updates:
                filt.update(float(self.dvl.time[j]), self.v_dvl[j])
            else:
                filt.flush_covariance()
        return filt

    def test_batch_matches_single_samples(self):
        """批量递推与逐样本递推给出相同估计与协方差"""
        cfg = FilterConfig()
        a = self._run(cfg, batched=True, seconds=10.0)
        b = self._run(cfg, batched=False, seconds=10.0)
        self.assertAlmostEqual(a.state.time, b.state.time, places=9)
        np.testing.assert_allclose(a.state.velocity, b.state.velocity, atol=1e-8)
        np.testing.assert_allclose(a.state.attitude, b.state.attitude, atol=1e-8)
        np.testing.assert_allclose(a.P, b.P, rtol=1e-6, atol=1e-14)
        self.assertEqual(a.stats.accel_accepted, b.stats.accel_accepted)

    def test_no_heading_information_on_straight_leg(self):
        """低速直线段航向不可观, σ 不应明显低于纯预测"""
        cfg = FilterConfig(mode=UpdateMode.BASELINE)
        reference = self._run(cfg, updates=False).sigma[PHI][2]
        fused = self._run(cfg).sigma[PHI][2]
        self.assertGreater(fused, 0.9 * reference)
        measured = self._run(replace(cfg, velocity_jacobian=VelocityJacobian.MEASUREMENT))
        self.assertLessEqual(measured.sigma[PHI][2], fused * 1.001)



if __name__ == "__main__":
    unittest.main()
