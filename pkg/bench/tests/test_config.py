import math

from django.test import SimpleTestCase
from pydantic import ValidationError

from services.config import (DEFAULT_CONTEXT_WINDOW, DEFAULT_GOAL_RADIUS, DEFAULT_POINT_CLOUD_SIZE,
                             DEFAULT_TRIALS, SNAKE_JOINT_LIMIT, EnvironmentConfig, PlannerConfig,
                             SamplerConfig, WsilConfig, get_preset, planner_config_for)


class ProtocolDefaultsTests(SimpleTestCase):

    def test_goal_radius_is_one(self):
        self.assertEqual(DEFAULT_GOAL_RADIUS, 1.0)
        self.assertEqual(EnvironmentConfig().goal_radius, 1.0)

    def test_max_samples_200_and_400_for_uniform_3d(self):
        self.assertEqual(PlannerConfig().max_samples, 200)
        self.assertEqual(planner_config_for('point2d', learned=False).max_samples, 200)
        self.assertEqual(planner_config_for('rigid2d', learned=True).max_samples, 200)
        self.assertEqual(planner_config_for('point3d', learned=False).max_samples, 400)
        self.assertEqual(planner_config_for('point3d', learned=True).max_samples, 200)

    def test_explicit_budget_wins(self):
        self.assertEqual(planner_config_for('point3d', learned=False, max_samples=50).max_samples, 50)

    def test_point_cloud_size_is_1000(self):
        self.assertEqual(DEFAULT_POINT_CLOUD_SIZE, 1000)
        self.assertEqual(EnvironmentConfig().point_cloud_size, 1000)

    def test_snake_joint_limit_is_45_degrees(self):
        self.assertAlmostEqual(SNAKE_JOINT_LIMIT, math.radians(45.0), places=15)

    def test_decoder_window_is_5(self):
        self.assertEqual(DEFAULT_CONTEXT_WINDOW, 5)
        self.assertEqual(SamplerConfig().context_window, 5)

    def test_three_trials(self):
        self.assertEqual(DEFAULT_TRIALS, 3)
        self.assertEqual(get_preset('desk')['trials'], 3)

    def test_attempt_cap_is_fifty_times_budget(self):
        self.assertEqual(PlannerConfig(max_samples=10).max_attempts, 500)


class ValidationTests(SimpleTestCase):

    def test_heads_must_divide_d_model(self):
        with self.assertRaises(ValidationError):
            SamplerConfig(d_model=6, n_heads=4)

    def test_anneal_divisor_above_one(self):
        with self.assertRaises(ValidationError):
            WsilConfig(anneal_divisor=1.0)

    def test_unknown_fields_rejected(self):
        with self.assertRaises(ValidationError):
            PlannerConfig(max_sample=3)

    def test_size_range_order(self):
        with self.assertRaises(ValidationError):
            EnvironmentConfig(size_range=(3.0, 1.0))

    def test_unknown_preset(self):
        with self.assertRaises(ValueError):
            get_preset('laptop')
        self.assertEqual(get_preset('full')['workspaces'], 100)
        self.assertEqual(get_preset('full')['name'], 'full')


class EpsilonScheduleTests(SimpleTestCase):

    def test_linear_then_flat(self):
        cfg = WsilConfig(total_iterations=100)
        self.assertEqual(cfg.epsilon(0), 1.0)
        self.assertAlmostEqual(cfg.epsilon(25), 0.55)
        self.assertAlmostEqual(cfg.epsilon(50), 0.1)
        self.assertAlmostEqual(cfg.epsilon(99), 0.1)

    def test_stays_in_unit_interval(self):
        cfg = WsilConfig(total_iterations=7)
        for i in range(20):
            self.assertTrue(0.0 <= cfg.epsilon(i) <= 1.0)
