import math

import numpy as np
from django.test import SimpleTestCase

from services.autodiff import Tensor, finite_diff_check, gaussian_entropy, value_and_grad
from services.config import TrainConfig
from services.geometry import StateSpace
from services.sampler_model import (SIGMA_FLOOR, GaussianStep, TrainingExample, build_example,
                                    causal_block_mask, imitation_loss, nll_loss, path_terms,
                                    reverse_augment, sample_next)
from services.training import Optimizer

from .helpers import point_scenario, scramble, tiny_sampler, zero_heads


def _example(rng, n_points=6, n_states=4, dim=2) -> TrainingExample:
    return TrainingExample(points=rng.uniform(-1, 1, size=(n_points, 2)),
                           goal=rng.uniform(-1, 1, size=dim),
                           path=rng.uniform(-1, 1, size=(n_states, dim)))


class EncoderTests(SimpleTestCase):

    def test_latent_shape(self):
        model = tiny_sampler(latent_len=3)
        Z = model.encode_state_space(np.random.default_rng(0).uniform(-1, 1, size=(50, 2)))
        self.assertEqual(Z.shape, [3, 4])

    def test_point_order_does_not_matter(self):
        model = scramble(tiny_sampler())
        rng = np.random.default_rng(1)
        points = rng.uniform(-1, 1, size=(40, 2))
        Z = model.encode_state_space(points).data
        Z_perm = model.encode_state_space(points[rng.permutation(40)]).data
        self.assertLess(float(np.max(np.abs(Z - Z_perm))), 1e-9)

    def test_wrong_point_dimension(self):
        with self.assertRaises(ValueError):
            tiny_sampler().encode_state_space(np.zeros((5, 3)))


class DecoderContractTests(SimpleTestCase):

    def setUp(self):
        self.model = scramble(tiny_sampler(context_window=5))
        rng = np.random.default_rng(2)
        self.Z = self.model.encode_state_space(rng.uniform(-1, 1, size=(20, 2)))
        self.goal = rng.uniform(-1, 1, size=2)
        self.nodes = rng.uniform(-1, 1, size=(8, 2))

    def test_nodes_outside_window_are_ignored(self):
        step = self.model.decode_next(self.Z, self.goal, self.nodes)
        old = self.nodes.copy()
        old[:3] += 0.5
        again = self.model.decode_next(self.Z, self.goal, old)
        np.testing.assert_array_equal(step.mu, again.mu)
        np.testing.assert_array_equal(step.sigma, again.sigma)

    def test_future_tokens_do_not_leak(self):
        prefixes = list(range(1, 7))
        mu, sigma = self.model.decode_steps(self.Z, self.goal, self.nodes[:6], prefixes)
        changed = self.nodes[:6].copy()
        changed[5] += 0.7
        mu2, sigma2 = self.model.decode_steps(self.Z, self.goal, changed, prefixes)
        np.testing.assert_array_equal(mu.data[:5], mu2.data[:5])
        np.testing.assert_array_equal(sigma.data[:5], sigma2.data[:5])
        self.assertFalse(np.array_equal(mu.data[5], mu2.data[5]))

    def test_batched_window_drops_oldest_node(self):
        prefixes = list(range(1, 7))
        mu, _ = self.model.decode_steps(self.Z, self.goal, self.nodes[:6], prefixes)
        changed = self.nodes[:6].copy()
        changed[0] -= 0.4
        mu2, _ = self.model.decode_steps(self.Z, self.goal, changed, prefixes)
        # the six-node prefix only sees nodes 1..5
        np.testing.assert_array_equal(mu.data[5], mu2.data[5])

    def test_batched_rows_match_single_decodes(self):
        prefixes = list(range(1, 7))
        mu, sigma = self.model.decode_steps(self.Z, self.goal, self.nodes[:6], prefixes)
        for k in prefixes:
            step = self.model.decode_next(self.Z, self.goal, self.nodes[:k])
            np.testing.assert_allclose(step.mu, mu.data[k - 1], atol=1e-10)
            np.testing.assert_allclose(step.sigma, sigma.data[k - 1], atol=1e-10)

    def test_causal_block_mask(self):
        keep = causal_block_mask([2, 3])
        self.assertEqual(keep.shape, (5, 5))
        self.assertTrue(keep[1, 0] and not keep[0, 1])
        self.assertFalse(keep[2, 1])
        self.assertTrue(keep[4, 2])

    def test_needs_a_root(self):
        with self.assertRaises(ValueError):
            self.model.decode_next(self.Z, self.goal, np.zeros((0, 2)))

    def test_state_dimension_checked(self):
        with self.assertRaises(ValueError):
            self.model.decode_next(self.Z, np.zeros(3), self.nodes)


class GaussianHeadTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(3)
        self.points = rng.uniform(-1, 1, size=(10, 2))
        self.nodes = rng.uniform(-1, 1, size=(3, 2))
        self.goal = rng.uniform(-1, 1, size=2)

    def test_zero_heads_give_unit_softplus(self):
        model = zero_heads(tiny_sampler())
        step = model.decode_next(model.encode_state_space(self.points), self.goal, self.nodes)
        np.testing.assert_array_equal(step.mu, np.zeros(2))
        for s in step.sigma:
            self.assertAlmostEqual(s, math.log(2.0) + 1e-4, places=12)

    def test_delta_head_is_relative_to_newest_node(self):
        model = zero_heads(tiny_sampler(predict_deltas=True))
        step = model.decode_next(model.encode_state_space(self.points), self.goal, self.nodes)
        np.testing.assert_allclose(step.mu, self.nodes[-1])

    def test_sigma_never_below_floor(self):
        model = scramble(tiny_sampler(), scale=3.0)
        model.params['head.sigma.b'].data = np.full_like(model.params['head.sigma.b'].data, -50.0)
        step = model.decode_next(model.encode_state_space(self.points), self.goal, self.nodes)
        self.assertTrue(np.all(step.sigma >= SIGMA_FLOOR))

    def test_vanishing_variance_returns_mean(self):
        space = StateSpace.make('point2d', [[0.0, 2.0], [0.0, 2.0]])
        target = np.array([0.7, 1.3])
        step = GaussianStep(space.normalize_for_model(target), np.full(2, SIGMA_FLOOR))
        rng = np.random.default_rng(4)
        for _ in range(10):
            self.assertLess(float(np.max(np.abs(sample_next(step, space, rng) - target))), 1e-3)

    def test_samples_stay_in_bounds(self):
        space = StateSpace.make('rigid2d', [[0.0, 10.0], [0.0, 10.0]])
        step = GaussianStep(np.array([0.95, -0.95, 0.9]), np.array([1.0, 1.0, 2.0]))
        rng = np.random.default_rng(5)
        for _ in range(100):
            self.assertTrue(space.contains(sample_next(step, space, rng)))


class LossTests(SimpleTestCase):

    def test_nll_closed_form_with_zero_heads(self):
        model = zero_heads(tiny_sampler())
        rng = np.random.default_rng(6)
        batch = [_example(rng, n_states=4), _example(rng, n_states=3)]
        s0 = float(np.logaddexp(0.0, 0.0)) + SIGMA_FLOOR
        expected = 0.0
        for ex in batch:
            targets = ex.path[1:]
            per_step = [2 * math.log(s0) + 0.5 * float(np.sum(x * x)) / s0 ** 2 + math.log(2 * math.pi)
                        for x in targets]
            expected += float(np.mean(per_step))
        expected /= len(batch)
        self.assertAlmostEqual(nll_loss(model, batch).item(), expected, places=10)

    def test_entropy_term_matches_closed_form(self):
        model = zero_heads(tiny_sampler())
        ex = _example(np.random.default_rng(7), n_states=5)
        _, entropy = path_terms(model, ex)
        s0 = float(np.logaddexp(0.0, 0.0)) + SIGMA_FLOOR
        self.assertAlmostEqual(entropy.item(), 2 * (math.log(s0) + 0.5 * math.log(2 * math.pi * math.e)), places=10)

    def test_reversed_path_loss_is_finite(self):
        scenario = point_scenario(obstacles=[((3.0, 0.6), (0.5, 0.3))], seed=3)
        path = [np.array([0.0, 0.0]), np.array([2.0, -0.3]), np.array([4.5, 0.1])]
        cloud = np.random.default_rng(8).uniform(-1, 1, size=(16, 2))
        model = tiny_sampler()
        flipped, did_flip = reverse_augment(path, np.random.default_rng(0), prob=1.0)
        self.assertTrue(did_flip)
        forward = build_example(scenario, cloud, path)
        backward = build_example(scenario, cloud, flipped, reversed_path=True)
        np.testing.assert_allclose(backward.goal, scenario.space.normalize_for_model(path[0]))
        for ex in (forward, backward):
            self.assertTrue(math.isfinite(nll_loss(model, [ex]).item()))

    def test_augment_off_keeps_order(self):
        path = [np.array([0.0, 0.0]), np.array([1.0, 1.0])]
        same, did_flip = reverse_augment(path, np.random.default_rng(0), prob=0.0)
        self.assertFalse(did_flip)
        np.testing.assert_array_equal(same[0], path[0])

    def test_short_path_rejected(self):
        with self.assertRaises(ValueError):
            build_example(point_scenario(), np.zeros((4, 2)), [np.zeros(2)])

    def test_unit_weights_reduce_to_nll_bit_for_bit(self):
        model = scramble(tiny_sampler())
        rng = np.random.default_rng(9)
        batch = [_example(rng), _example(rng, n_states=6)]
        nll_value, nll_grads = value_and_grad(lambda p: nll_loss(model, batch), model.params)
        w_value, w_grads = value_and_grad(lambda p: imitation_loss(model, batch, [1.0, 1.0], 0.0), model.params)
        self.assertEqual(nll_value, w_value)
        for name in nll_grads:
            np.testing.assert_array_equal(nll_grads[name], w_grads[name])

    def test_weight_mismatch(self):
        rng = np.random.default_rng(10)
        with self.assertRaises(ValueError):
            imitation_loss(tiny_sampler(), [_example(rng)], [0.5, 0.5])

    def test_gradient_check_full_model(self):
        model = scramble(tiny_sampler(), seed=11)
        self.assertLessEqual(model.parameter_count, 1000)
        batch = [_example(np.random.default_rng(12), n_points=5, n_states=4)]
        self.assertLess(finite_diff_check(lambda p: nll_loss(model, batch), model.params), 1e-4)

    def test_adam_fits_a_single_path(self):
        model = tiny_sampler(d_model=8, n_heads=2)
        batch = [_example(np.random.default_rng(13), n_states=5)]
        optimizer = Optimizer(model, TrainConfig(lr=1e-2))
        losses = [optimizer.step(lambda: nll_loss(model, batch)) for _ in range(40)]
        self.assertLess(losses[-1], losses[0])
        self.assertTrue(all(math.isfinite(v) for v in losses))

    def test_entropy_matches_autodiff_helper(self):
        sigma = np.array([[0.5, 2.0]])
        expected = math.log(0.5) + math.log(2.0) + math.log(2 * math.pi * math.e)
        self.assertAlmostEqual(gaussian_entropy(Tensor(sigma)).item(), expected, places=12)
