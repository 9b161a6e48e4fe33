import math

import numpy as np
from django.test import SimpleTestCase, tag

from services.autodiff import Tensor, finite_diff_check
from services.config import TrainConfig
from services.environment import normalize_points, scenario_point_cloud
from services.estimator import estimator_batch_loss, estimator_loss
from services.training import Optimizer

from .helpers import point_scenario, scramble, tiny_estimator


class EstimatorLossTests(SimpleTestCase):

    def test_half_squared_error(self):
        self.assertEqual(estimator_loss(3.0, 1.0).item(), 2.0)
        self.assertEqual(estimator_loss(1.0, Tensor(1.0)).item(), 0.0)

    def test_batch_mean(self):
        model = tiny_estimator()
        rng = np.random.default_rng(0)
        points = rng.uniform(-1, 1, (8, 2))
        start, goal = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        c_est = model.predict(points, start, goal)
        batch = [(points, start, goal, c_est + 1.0), (points, start, goal, c_est - 3.0)]
        self.assertAlmostEqual(estimator_batch_loss(model, batch).item(), (0.5 + 4.5) / 2, places=10)

    def test_empty_batch(self):
        with self.assertRaises(ValueError):
            estimator_batch_loss(tiny_estimator(), [])


class EstimatorModelTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(1)
        self.points = rng.uniform(-1, 1, (30, 2))
        self.start = rng.uniform(-1, 1, 2)
        self.goal = rng.uniform(-1, 1, 2)

    def test_prediction_positive_and_scaled(self):
        base = tiny_estimator(length_scale=1.0)
        wide = tiny_estimator(length_scale=10.0)
        a = base.predict(self.points, self.start, self.goal)
        b = wide.predict(self.points, self.start, self.goal)
        self.assertGreater(a, 0.0)
        self.assertAlmostEqual(b, 10.0 * a, places=10)

    def test_point_order_does_not_matter(self):
        model = scramble(tiny_estimator(encoder_self_layers=1))
        perm = np.random.default_rng(2).permutation(30)
        a = model.predict(self.points, self.start, self.goal)
        b = model.predict(self.points[perm], self.start, self.goal)
        self.assertLess(abs(a - b), 1e-9)

    def test_wrong_point_dimension(self):
        with self.assertRaises(ValueError):
            tiny_estimator().predict(np.zeros((4, 3)), self.start, self.goal)

    def test_gradient_check(self):
        model = scramble(tiny_estimator(), seed=3)
        rng = np.random.default_rng(4)
        batch = [(rng.uniform(-1, 1, (5, 2)), rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2), 2.5),
                 (rng.uniform(-1, 1, (5, 2)), rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2), 0.7)]
        self.assertLess(finite_diff_check(lambda p: estimator_batch_loss(model, batch), model.params), 1e-4)

    def test_regression_reduces_loss(self):
        model = tiny_estimator(d_model=8, n_heads=2)
        batch = [(self.points, self.start, self.goal, 3.0), (self.points, self.goal, self.start * 0.5, 1.2)]
        optimizer = Optimizer(model, TrainConfig(lr=2e-2))
        losses = [optimizer.step(lambda: estimator_batch_loss(model, batch)) for _ in range(60)]
        self.assertLess(losses[-1], losses[0])
        self.assertTrue(all(math.isfinite(v) for v in losses))


@tag('slow')
class EmptyWorkspaceLearningTests(SimpleTestCase):
    """With nothing in the way the estimate should approach the straight-line distance."""

    def _pairs(self, rng, n):
        pairs = []
        while len(pairs) < n:
            start, goal = rng.uniform(0.0, 40.0, 2), rng.uniform(0.0, 40.0, 2)
            if np.linalg.norm(goal - start) >= 10.0:
                pairs.append((start, goal))
        return pairs

    def test_matches_euclidean_distance_on_held_out_pairs(self):
        scenario = point_scenario(start=(1.0, 1.0), goal=(30.0, 30.0), bounds=((0.0, 40.0), (0.0, 40.0)))
        space = scenario.space
        points = normalize_points(scenario.workspace, scenario_point_cloud(scenario, 8))
        model = tiny_estimator(d_model=16, n_heads=2, mlp_ratio=2, length_scale=28.0)
        optimizer = Optimizer(model, TrainConfig(lr=1e-2))
        rng = np.random.default_rng(7)

        def batch(pairs):
            return [(points, space.normalize_for_model(s), space.normalize_for_model(g),
                     float(np.linalg.norm(g - s))) for s, g in pairs]

        for _ in range(1500):
            train = batch(self._pairs(rng, 8))
            optimizer.step(lambda: estimator_batch_loss(model, train))
        errors = [abs(model.predict(p, s, g) - c) / c for p, s, g, c in batch(self._pairs(rng, 50))]
        self.assertLess(float(np.mean(errors)), 0.2)
