#!/usr/bin/env python3
"""
测试 Truth Trajectories 模块
- 剖面积分
- 直线 / 割草机 / 8 字轨迹的几何与统计量
- 参数校验
"""

import math
import os
import sys
import unittest

import numpy as np

# 添加 lib 到 path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from lib.frames import yaw_from_dcm
from lib.trajectory import (
    HeadingProfile,
    RateSegment,
    TrajectoryError,
    build_trajectory,
    gen_figure_eight,
    gen_lawnmower,
    gen_static,
    gen_straight,
    smoothstep,
    smoothstep_integral,
)


class TestProfiles(unittest.TestCase):
    """测试航向剖面"""

    def test_smoothstep_endpoints(self):
        """smoothstep 端点与积分"""
        self.assertAlmostEqual(float(smoothstep(0.0)), 0.0)
        self.assertAlmostEqual(float(smoothstep(1.0)), 1.0)
        self.assertAlmostEqual(float(smoothstep_integral(1.0)), 0.5)

    def test_ramp_segment_angle(self):
        """线性过渡段转角为平均转速乘时长"""
        seg = RateSegment(4.0, 0.0, 0.2)
        self.assertAlmostEqual(seg.total_angle, 0.4)

    def test_heading_continuity(self):
        """分段边界处航向连续"""
        profile = HeadingProfile([RateSegment(2.0, 0.1, 0.1), RateSegment(3.0, 0.1, -0.1)], 0.3)
        psi, rate = profile.evaluate(np.array([1.999999, 2.0, 2.000001]))
        self.assertLess(np.max(np.abs(np.diff(psi))), 1e-6)
        self.assertAlmostEqual(float(rate[1]), 0.1, places=5)


class TestStraightAndStatic(unittest.TestCase):
    """测试直线与静止轨迹"""

    def test_straight_heading_and_speed(self):
        """直线轨迹航向与速度恒定"""
        truth = gen_straight(10.0, 2.0, heading=math.radians(30.0))
        np.testing.assert_allclose(np.linalg.norm(truth.velocity, axis=1), 2.0)
        self.assertAlmostEqual(yaw_from_dcm(truth.attitude[-1]), math.radians(30.0))
        self.assertAlmostEqual(truth.path_length(), 20.0, places=6)
        np.testing.assert_allclose(truth.velocity_body[:, 1:], 0.0, atol=1e-12)

    def test_straight_acceleration(self):
        """纵向常值加速度"""
        truth = gen_straight(10.0, 1.0, accel=0.05)
        np.testing.assert_allclose(truth.velocity_rate_body[:, 0], 0.05, atol=1e-12)
        self.assertAlmostEqual(truth.velocity[-1, 0], 1.5)

    def test_static(self):
        """静止轨迹速度为零"""
        truth = gen_static(5.0)
        np.testing.assert_array_equal(truth.velocity, 0.0)
        self.assertAlmostEqual(truth.duration, 5.0)

    def test_invalid_parameters(self):
        """非正时长或速度报错"""
        with self.assertRaises(TrajectoryError):
            gen_straight(-1.0, 1.0)
        with self.assertRaises(TrajectoryError):
            gen_straight(10.0, 0.0)


class TestLawnmower(unittest.TestCase):
    """测试割草机式测线"""

    @classmethod
    def setUpClass(cls):
        cls.truth = gen_lawnmower()

    def test_duration(self):
        """5 段直线 + 4 个 U 形转弯"""
        expected = 5 * 300.0 + 180.0 / 6 + 180.0 / 9 + 180.0 / 12 + 180.0 / 15
        self.assertAlmostEqual(self.truth.duration, expected, places=2)

    def test_turns_alternate(self):
        """每次转弯 180°, 方向交替"""
        legs = [150.0, 480.0, 800.0, 1115.0, 1427.0]
        headings = [math.degrees(yaw_from_dcm(self.truth.attitude[int(t * 100)])) for t in legs]
        for a, b in zip(headings, headings[1:]):
            self.assertAlmostEqual(abs(((b - a) + 180.0) % 360.0 - 180.0), 180.0, places=6)
        self.assertAlmostEqual(headings[0], headings[2], places=6)

    def test_speed_constant(self):
        """航速 0.6 km/h"""
        np.testing.assert_allclose(np.linalg.norm(self.truth.velocity, axis=1), 0.6 / 3.6)

    def test_rate_limit(self):
        """转速超过上限报错"""
        with self.assertRaises(TrajectoryError):
            gen_lawnmower(turn_rates=(45.0,))


class TestFigureEight(unittest.TestCase):
    """测试 8 字机动"""

    @classmethod
    def setUpClass(cls):
        cls.truth = gen_figure_eight()

    def test_statistics(self):
        """平均航速与平均角速度满足目标"""
        info = self.truth.info
        self.assertAlmostEqual(self.truth.duration, 394.0, places=1)
        self.assertAlmostEqual(info["mean_abs_turn_rate_deg"], 1.41, delta=0.02)
        self.assertLessEqual(info["max_abs_turn_rate_deg"], 17.0)
        self.assertAlmostEqual(info["mean_speed"], 0.9, delta=0.01)

    def test_opposed_lobes(self):
        """两个转弯方向相反, 净转角为零"""
        rate = self.truth.body_rate[:, 2]
        self.assertGreater(np.max(rate), 0.0)
        self.assertLess(np.min(rate), 0.0)
        net = math.degrees(yaw_from_dcm(self.truth.attitude[-1]) - yaw_from_dcm(self.truth.attitude[0]))
        self.assertAlmostEqual(((net + 180.0) % 360.0) - 180.0, 0.0, places=4)

    def test_speed_modulation(self):
        """航速按 ±20% 调制"""
        speed = np.linalg.norm(self.truth.velocity, axis=1)
        self.assertAlmostEqual(float(speed.max()), 1.08, places=3)
        self.assertAlmostEqual(float(speed.min()), 0.72, places=3)

    def test_smooth_rate(self):
        """转速连续 (无阶跃)"""
        rate = self.truth.body_rate[:, 2]
        self.assertLess(np.max(np.abs(np.diff(rate))), math.radians(0.1))

    def test_infeasible(self):
        """所需转速超过上限时报错"""
        with self.assertRaises(TrajectoryError):
            gen_figure_eight(max_turn_rate=1.0)
        with self.assertRaises(TrajectoryError):
            gen_figure_eight(mean_turn_rate=0.5)


class TestBuildTrajectory(unittest.TestCase):
    """测试按名称构建"""

    def test_heading_deg_conversion(self):
        """heading_deg 转换为弧度"""
        truth = build_trajectory("straight", {"duration": 5.0, "speed": 1.0, "heading_deg": 90.0})
        self.assertAlmostEqual(yaw_from_dcm(truth.attitude[0]), math.pi / 2)

    def test_unknown_kind(self):
        """未知类型报错"""
        with self.assertRaises(TrajectoryError):
            build_trajectory("spiral", {})

    def test_to_frame_columns(self):
        """CSV 表首列为 time"""
        df = gen_straight(2.0, 1.0).to_frame()
        self.assertEqual(df.columns[0], "time")
        self.assertEqual(len(df), 201)


if __name__ == "__main__":
    unittest.main()
