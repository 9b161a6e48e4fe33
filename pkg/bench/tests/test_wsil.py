import math
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from services.autodiff import value_and_grad
from services.config import PlannerConfig, TrainConfig, WsilConfig, planner_config_for
from services.environment import scenario_point_cloud
from services.planner import UniformSampler, rrt_star
from services.sampler_model import TrainingExample, path_terms
from services.wsil import (SOURCE_RRT, WEIGHT_MAX, WEIGHT_MIN, DemonstrationRecord, ReplayBuffer, WsilTrainer,
                           anneal_K, quality_weight, wsil_loss)

from .helpers import open_field, scramble, tiny_estimator, tiny_sampler


def _record(seed=0, scenario=None):
    scenario = scenario or open_field()
    result = rrt_star(scenario, UniformSampler(), PlannerConfig(max_samples=1000), np.random.default_rng(seed))
    return DemonstrationRecord(scenario, result.path, result.path_length, SOURCE_RRT)


class QualityWeightTests(SimpleTestCase):

    def test_logistic_form(self):
        for c_real, c_est, K in [(10.0, 12.0, 8.0), (30.0, 12.0, 0.5), (5.0, 5.0, 2.0), (3.0, 40.0, 1e-3)]:
            expected = 1.0 / (1.0 + math.exp(c_real - c_est - K))
            self.assertAlmostEqual(quality_weight(c_real, c_est, K), expected, delta=1e-12)

    def test_half_at_threshold(self):
        self.assertEqual(quality_weight(12.0, 4.0, 8.0), 0.5)

    def test_longer_paths_weigh_less(self):
        values = [quality_weight(c, 20.0, 1.0) for c in np.linspace(-5.0, 45.0, 200)]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_extreme_arguments_stay_inside_open_interval(self):
        self.assertEqual(quality_weight(-1e4, 0.0, 0.0), WEIGHT_MAX)
        self.assertEqual(quality_weight(1e4, 0.0, 0.0), WEIGHT_MIN)
        # far shorter than predicted with a large K still stays below one
        self.assertEqual(quality_weight(0.0, 40.0, 8.0), WEIGHT_MAX)
        self.assertEqual(quality_weight(800.0, 0.0, 0.0), WEIGHT_MIN)
        self.assertLess(WEIGHT_MAX, 1.0)
        self.assertGreater(WEIGHT_MIN, 0.0)

    def test_open_interval_over_finite_inputs(self):
        rng = np.random.default_rng(0)
        for c_real, c_est, K in zip(rng.uniform(-1e3, 1e3, 2000), rng.uniform(-1e3, 1e3, 2000),
                                    10.0 ** rng.uniform(-3, 3, 2000)):
            w = quality_weight(c_real, c_est, K)
            self.assertTrue(0.0 < w < 1.0, (c_real, c_est, K, w))


class AnnealTests(SimpleTestCase):

    def test_halves_on_schedule(self):
        cfg = WsilConfig()
        self.assertEqual(anneal_K(8.0, 500, cfg), 4.0)
        self.assertEqual(anneal_K(8.0, 499, cfg), 8.0)
        self.assertEqual(anneal_K(8.0, 0, cfg), 8.0)

    def test_floor(self):
        cfg = WsilConfig(anneal_every=1)
        self.assertEqual(anneal_K(1.5e-3, 1, cfg), 1e-3)

    def test_K_must_be_positive(self):
        with self.assertRaises(ValueError):
            anneal_K(0.0, 1, WsilConfig())


class ReplayBufferTests(SimpleTestCase):

    def test_fifo_eviction(self):
        scenarios = [open_field(scenario_id=i) for i in range(5)]
        buffer = ReplayBuffer(capacity=3)
        for s in scenarios:
            buffer.append(DemonstrationRecord(s, [s.start, s.goal], s.space.distance(s.start, s.goal)))
        self.assertEqual(len(buffer), 3)
        self.assertEqual([r.scenario_id for r in buffer], [2, 3, 4])

    def test_sampling(self):
        buffer = ReplayBuffer(capacity=3)
        with self.assertRaises(ValueError):
            buffer.sample(np.random.default_rng(0), 2)
        s = open_field()
        buffer.append(DemonstrationRecord(s, [s.start, s.goal], 1.0))
        self.assertEqual(len(buffer.sample(np.random.default_rng(0), 4)), 4)

    def test_capacity_checked(self):
        with self.assertRaises(ValueError):
            ReplayBuffer(0)

    def test_dump_and_restore(self):
        scenario = open_field(scenario_id=3)
        record = _record(scenario=scenario)
        self.assertTrue(record.validate())
        buffer = ReplayBuffer(capacity=4)
        buffer.append(record)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'buffer.jsonl'
            buffer.dump(path)
            shared = ReplayBuffer.restore(path, capacity=4, scenarios=[scenario])
            rebuilt = ReplayBuffer.restore(path, capacity=4)
        self.assertIs(next(iter(shared)).scenario, scenario)
        again = next(iter(rebuilt))
        self.assertEqual(again.c_real, record.c_real)
        self.assertEqual(again.source, SOURCE_RRT)
        self.assertTrue(again.validate())
        for a, b in zip(again.path, record.path):
            np.testing.assert_array_equal(a, b)

    def test_tampered_length_fails_validation(self):
        record = _record(seed=1)
        record.c_real += 0.5
        self.assertFalse(record.validate())


class WeightedLossTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        self.example = TrainingExample(rng.uniform(-1, 1, (6, 2)), rng.uniform(-1, 1, 2), rng.uniform(-1, 1, (4, 2)))

    def test_zero_weight_leaves_only_entropy(self):
        model = scramble(tiny_sampler())
        value, grads = value_and_grad(lambda p: wsil_loss(model, [self.example], [0.0], 1e-3), model.params)
        _, entropy = path_terms(model, self.example)
        self.assertAlmostEqual(value, -1e-3 * entropy.item(), places=12)
        np.testing.assert_array_equal(grads['head.mu.w'], 0.0)
        np.testing.assert_array_equal(grads['head.mu.b'], 0.0)
        self.assertTrue(np.any(grads['head.sigma.w'] != 0.0))

    def test_weight_scales_likelihood(self):
        model = scramble(tiny_sampler())
        loglik, _ = path_terms(model, self.example)
        half = wsil_loss(model, [self.example], [0.5], 0.0).item()
        self.assertAlmostEqual(half, -0.5 * loglik.item(), places=12)

    def test_rejects_weights_outside_unit_interval(self):
        model = tiny_sampler()
        for bad in ([1.5], [-0.1], [math.nan], [0.5, 0.5]):
            with self.assertRaises(ValueError):
                wsil_loss(model, [self.example], bad, 1e-3)

    def test_rejects_negative_entropy_coefficient(self):
        with self.assertRaises(ValueError):
            wsil_loss(tiny_sampler(), [self.example], [0.5], -1e-3)


class TrainerTests(SimpleTestCase):

    def _trainer(self, buffer=None, config=None, **kwargs):
        scenarios = [open_field(scenario_id=0), open_field(seed=1, scenario_id=1)]
        config = config or WsilConfig(anneal_every=2, batch_size=2, buffer_capacity=3, total_iterations=4)
        return WsilTrainer(tiny_sampler(), tiny_estimator(length_scale=14.0), scenarios, config,
                           planner_config_for('point2d', learned=True), TrainConfig(), point_cloud_size=32,
                           buffer=buffer, **kwargs)

    def test_short_run(self):
        trainer = self._trainer()
        rows = trainer.run(np.random.default_rng(0), progress=False)
        self.assertEqual([r['iteration'] for r in rows], [0, 1, 2, 3])
        self.assertEqual([r['K'] for r in rows], [8.0, 8.0, 4.0, 4.0])
        self.assertEqual(trainer.K, 2.0)
        self.assertEqual(rows[0]['epsilon'], 1.0)
        self.assertLessEqual(len(trainer.buffer), 3)
        for row in rows:
            if row['buffer_len']:
                self.assertTrue(math.isfinite(row['sampler_loss']))
                self.assertTrue(0.0 < row['mean_weight'] <= 1.0)
        for record in trainer.buffer:
            self.assertTrue(record.validate())

    def test_runs_are_reproducible(self):
        first = self._trainer().run(np.random.default_rng(4), progress=False)
        second = self._trainer().run(np.random.default_rng(4), progress=False)
        np.testing.assert_equal(first, second)

    def test_keeps_a_supplied_empty_buffer(self):
        buffer = ReplayBuffer(capacity=3)
        self.assertIs(self._trainer(buffer).buffer, buffer)

    def test_needs_scenarios(self):
        with self.assertRaises(ValueError):
            WsilTrainer(tiny_sampler(), tiny_estimator(), [], WsilConfig(), PlannerConfig(), TrainConfig(), 32)

    def test_resumed_run_continues_schedules(self):
        trainer = self._trainer(start_iteration=2, K=4.0)
        rows = trainer.run(np.random.default_rng(0), progress=False)
        self.assertEqual([r['iteration'] for r in rows], [2, 3])
        self.assertEqual([r['K'] for r in rows], [4.0, 4.0])
        self.assertEqual(rows[0]['epsilon'], trainer.config.epsilon(2))
        self.assertEqual(trainer.state_meta(), {'iteration': 4, 'K': 2.0})
        self.assertEqual(trainer.run(np.random.default_rng(1), progress=False), [])

    def test_rejects_bad_resume_state(self):
        with self.assertRaises(ValueError):
            self._trainer(start_iteration=-1)
        with self.assertRaises(ValueError):
            self._trainer(K=0.0)

    def test_run_invariants(self):
        config = WsilConfig(anneal_every=1, batch_size=2, buffer_capacity=3, total_iterations=6, K_floor=1.0)
        trainer = self._trainer(config=config)
        appended = []
        original = ReplayBuffer.append

        def recording(buffer, record):
            appended.append(record)
            original(buffer, record)

        with mock.patch.object(ReplayBuffer, 'append', autospec=True, side_effect=recording):
            rows = trainer.run(np.random.default_rng(2), progress=False)
        self.assertEqual([r['K'] for r in rows], [8.0, 4.0, 2.0, 1.0, 1.0, 1.0])
        self.assertEqual(trainer.K, 1.0)
        for row in rows:
            self.assertLessEqual(row['buffer_len'], 3)
            self.assertTrue(all(0.0 < w < 1.0 for w in row['weights']))
        self.assertEqual([id(r) for r in trainer.buffer], [id(r) for r in appended[-3:]])

    def test_point_clouds_built_once_per_scenario(self):
        trainer = self._trainer()
        for scenario in trainer.scenarios:
            trainer.buffer.append(_record(scenario=scenario))
        rng = np.random.default_rng(0)
        with mock.patch('services.wsil.scenario_point_cloud', wraps=scenario_point_cloud) as spy:
            for _ in range(3):
                trainer.train_step(rng)
        self.assertGreaterEqual(spy.call_count, 1)
        self.assertLessEqual(spy.call_count, len(trainer.scenarios))
