#!/usr/bin/env python3
"""
测试 INS 模块
- 单步递推与输入校验
- 与理想 IMU 合成互逆
- 批量递推与逐步递推一致
"""

import math
import os
import sys
import unittest

import numpy as np

# 添加 lib 到 path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from lib.frames import GeoContext, dcm_from_euler, earth_rate_ned, gravity_ned, is_rotation, so3_log
from lib.ins import (
    ImuSample,
    MechanizationError,
    NavState,
    body_rate_relative,
    coriolis,
    mechanize_span,
    mechanize_step,
)
from lib.sensors import ideal_imu
from lib.trajectory import gen_figure_eight, gen_straight


class TestMechanizeStep(unittest.TestCase):
    """测试单步递推"""

    def setUp(self):
        self.geo = GeoContext(latitude=math.radians(32.8))
        self.level = NavState(time=0.0, velocity=np.zeros(3), attitude=np.eye(3), geo=self.geo)

    def test_static_stays_static(self):
        """无地球项时, 比力抵消重力则保持静止"""
        imu = ImuSample(time=0.01, specific_force=-gravity_ned(self.geo), angular_rate=np.zeros(3))
        state = self.level
        for k in range(100):
            imu.time = (k + 1) * 0.01
            state = mechanize_step(state, imu, 0.01, earth_rates=False)
        np.testing.assert_allclose(state.velocity, 0.0, atol=1e-12)
        np.testing.assert_allclose(state.attitude, np.eye(3), atol=1e-12)
        self.assertAlmostEqual(state.time, 1.0)

    def test_accel_bias_is_subtracted(self):
        """比力零偏估计被扣除"""
        ba = np.array([0.01, -0.02, 0.005])
        state = NavState(time=0.0, velocity=np.zeros(3), attitude=np.eye(3), geo=self.geo,
                         accel_bias=ba)
        imu = ImuSample(time=0.01, specific_force=-gravity_ned(self.geo) + ba,
                        angular_rate=np.zeros(3))
        out = mechanize_step(state, imu, 0.01, earth_rates=False)
        np.testing.assert_allclose(out.velocity, 0.0, atol=1e-14)

    def test_constant_rotation(self):
        """常值角速度积分出相应航向"""
        w = np.array([0.0, 0.0, 0.1])
        state = self.level
        for k in range(100):
            imu = ImuSample(time=(k + 1) * 0.01, specific_force=-gravity_ned(self.geo),
                            angular_rate=w)
            state = mechanize_step(state, imu, 0.01, earth_rates=False)
        np.testing.assert_allclose(so3_log(state.attitude), [0.0, 0.0, 0.1], atol=1e-12)
        self.assertTrue(is_rotation(state.attitude))

    def test_invalid_dt(self):
        """dt <= 0 或 > 0.1 s 报错"""
        imu = ImuSample(time=0.0, specific_force=np.zeros(3), angular_rate=np.zeros(3))
        for dt in (0.0, -0.01, 0.2):
            with self.assertRaises(MechanizationError):
                mechanize_step(self.level, imu, dt)

    def test_non_finite_sample(self):
        """非有限 IMU 样本报错"""
        imu = ImuSample(time=0.01, specific_force=np.array([np.nan, 0.0, 0.0]),
                        angular_rate=np.zeros(3))
        with self.assertRaises(MechanizationError):
            mechanize_step(self.level, imu, 0.01)

    def test_coriolis_disabled(self):
        """关闭地球项时科氏项为零"""
        v = np.array([1.0, 2.0, 0.0])
        np.testing.assert_array_equal(coriolis(v, self.geo, earth_rates=False), np.zeros(3))
        self.assertGreater(np.linalg.norm(coriolis(v, self.geo)), 0.0)

    def test_body_rate_relative_removes_earth_rate(self):
        """静止时陀螺只测到地球自转, 相对角速度为零"""
        R = dcm_from_euler(0.0, 0.0, 0.7)
        state = NavState(time=0.0, velocity=np.zeros(3), attitude=R, geo=self.geo)
        w = R.T @ earth_rate_ned(self.geo)
        np.testing.assert_allclose(body_rate_relative(state, w), 0.0, atol=1e-18)


class TestRoundTrip(unittest.TestCase):
    """测试递推与理想 IMU 合成互逆"""

    def _replay(self, truth, earth_rates):
        force, omega = ideal_imu(truth, earth_rates)
        state = truth.nav_state(0)
        for k in range(len(force)):
            imu = ImuSample(time=float(truth.time[k + 1]), specific_force=force[k],
                            angular_rate=omega[k])
            state = mechanize_step(state, imu, truth.dt, earth_rates)
        return state, truth.nav_state(len(truth.time) - 1)

    def test_straight_with_earth_rates(self):
        """含地球项的直线航行逐步复现"""
        truth = gen_straight(20.0, 2.0, heading=0.5, accel=0.01,
                             geo=GeoContext(latitude=0.6))
        state, final = self._replay(truth, True)
        np.testing.assert_allclose(state.velocity, final.velocity, atol=1e-9)
        self.assertLess(np.linalg.norm(so3_log(final.attitude @ state.attitude.T)), 1e-9)

    def test_figure_eight_without_earth_rates(self):
        """8 字机动前 30 s 逐步复现"""
        truth = gen_figure_eight()
        head = type(truth)(
            name=truth.name, time=truth.time[:3001], velocity=truth.velocity[:3001],
            attitude=truth.attitude[:3001], accel_ned=truth.accel_ned[:3001],
            body_rate=truth.body_rate[:3001], position=truth.position[:3001],
            geo=truth.geo, info=truth.info,
        )
        state, final = self._replay(head, False)
        np.testing.assert_allclose(state.velocity, final.velocity, atol=1e-9)
        self.assertLess(np.linalg.norm(so3_log(final.attitude @ state.attitude.T)), 1e-9)

class TestMechanizeSpan(unittest.TestCase):
    """测试批量递推"""

    def setUp(self):
        self.truth = gen_straight(10.0, 1.5, heading=0.4, accel=0.02,
                                  geo=GeoContext(latitude=0.6))
        self.force, self.omega = ideal_imu(self.truth, True)
        rng = np.random.default_rng(4)
        self.force = self.force + 1e-3 * rng.standard_normal(self.force.shape)
        self.omega = self.omega + 1e-4 * rng.standard_normal(self.omega.shape)

    def test_matches_single_steps(self):
        """一个 DVL 周期内批量结果与逐步结果一致"""
        state0 = self.truth.nav_state(0)
        state0.accel_bias = np.array([1e-3, -2e-3, 5e-4])
        state0.gyro_bias = np.array([1e-5, 0.0, -2e-5])
        n = 100
        dts = np.full(n, self.truth.dt)
        span = mechanize_span(state0, self.force[:n], self.omega[:n], dts)
        state = state0
        for k in range(n):
            imu = ImuSample(time=float(self.truth.time[k + 1]), specific_force=self.force[k],
                            angular_rate=self.omega[k])
            state = mechanize_step(state, imu, self.truth.dt)
            np.testing.assert_allclose(span.velocity[k], state.velocity, atol=1e-8)
            np.testing.assert_allclose(span.attitude[k], state.attitude, atol=1e-8)
        self.assertAlmostEqual(span.state.time, state.time, places=12)
        self.assertTrue(is_rotation(span.state.attitude))
        np.testing.assert_array_equal(span.state.gyro_bias, state0.gyro_bias)

    def test_round_trip_in_blocks(self):
        """按 1 s 分段批量回放理想 IMU 复现真值"""
        force, omega = ideal_imu(self.truth, True)
        state = self.truth.nav_state(0)
        for start in range(0, len(force), 100):
            block = slice(start, start + 100)
            dts = np.full(len(force[block]), self.truth.dt)
            state = mechanize_span(state, force[block], omega[block], dts).state
        final = self.truth.nav_state(len(self.truth.time) - 1)
        np.testing.assert_allclose(state.velocity, final.velocity, atol=1e-7)
        self.assertLess(np.linalg.norm(so3_log(final.attitude @ state.attitude.T)), 1e-7)

    def test_empty_span(self):
        """空区间返回原状态"""
        state0 = self.truth.nav_state(0)
        span = mechanize_span(state0, np.zeros((0, 3)), np.zeros((0, 3)), [])
        self.assertIs(span.state, state0)
        self.assertEqual(span.attitude.shape, (0, 3, 3))

    def test_shape_mismatch(self):
        """比力与角速度长度不一致报错"""
        with self.assertRaises(MechanizationError):
            mechanize_span(self.truth.nav_state(0), self.force[:3], self.omega[:2],
                           np.full(3, self.truth.dt))



if __name__ == "__main__":
    unittest.main()
