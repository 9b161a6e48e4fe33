"""Gradient-step plumbing and the supervised pretraining loop."""
import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from services.autodiff import (AdamState, NonFiniteError, Tensor, adam_step, sgd_step,
                               value_and_grad)
from services.blocks import NetworkModel
from services.config import TrainConfig
from services.environment import Scenario, scenario_point_cloud
from services.sampler_model import SamplerModel, build_example, nll_loss, reverse_augment

logger = logging.getLogger(__name__)

PRETRAIN_LOG_FIELDS = ['iteration', 'loss']


class TrainingError(RuntimeError):
    """A training step produced a non-finite loss or gradient."""


def optimizer_arrays(state: AdamState) -> Dict[str, np.ndarray]:
    """Adam moments as extra checkpoint entries."""
    arrays = {'adam.step': np.array([float(state.step)])}
    for name, m in state.m.items():
        arrays[f'adam.m/{name}'] = m
    for name, v in state.v.items():
        arrays[f'adam.v/{name}'] = v
    return arrays


def restore_optimizer(arrays: Dict[str, np.ndarray]) -> AdamState:
    state = AdamState()
    if 'adam.step' in arrays:
        state.step = int(arrays['adam.step'][0])
    for key, value in arrays.items():
        if key.startswith('adam.m/'):
            state.m[key[len('adam.m/'):]] = value.copy()
        elif key.startswith('adam.v/'):
            state.v[key[len('adam.v/'):]] = value.copy()
    return state


class Optimizer:
    """Applies one Adam or SGD update per call on a model's parameters."""

    def __init__(self, model: NetworkModel, config: TrainConfig, state: Optional[AdamState] = None):
        self.model = model
        self.config = config
        self.state = state or AdamState()

    def step(self, loss_fn: Callable[[], Tensor]) -> float:
        try:
            loss, grads = value_and_grad(lambda _params: loss_fn(), self.model.params)
        except NonFiniteError as exc:
            raise TrainingError(f'{self.model.model_kind} forward pass went non-finite: {exc}') from exc
        if not math.isfinite(loss):
            raise TrainingError(f'{self.model.model_kind} loss is {loss}')
        bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
        if bad:
            raise TrainingError(f'Non-finite gradients for {bad[:5]}')
        cfg = self.config
        if cfg.optimizer == 'sgd':
            sgd_step(self.model.params, grads, cfg.lr)
        else:
            adam_step(self.model.params, grads, self.state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_adam)
        return loss


@dataclass
class Demonstration:
    scenario: Scenario
    path: List[np.ndarray]


class PretrainService:
    """Supervised pretraining of the sampler on uniform-RRT* demonstrations."""

    def __init__(self, model: SamplerModel, demonstrations: Sequence[Demonstration], config: TrainConfig,
                 point_cloud_size: int, optimizer_state: Optional[AdamState] = None):
        if not demonstrations:
            raise TrainingError('No demonstrations to train on')
        self.model = model
        self.demonstrations = list(demonstrations)
        self.config = config
        self.point_cloud_size = point_cloud_size
        self.optimizer = Optimizer(model, config, optimizer_state)
        self._clouds: Dict[int, np.ndarray] = {}

    def _cloud(self, scenario: Scenario) -> np.ndarray:
        key = id(scenario)
        if key not in self._clouds:
            self._clouds[key] = scenario_point_cloud(scenario, self.point_cloud_size)
        return self._clouds[key]

    def sample_batch(self, rng: np.random.Generator):
        picks = rng.integers(0, len(self.demonstrations), size=self.config.batch_size)
        batch = []
        for i in picks:
            demo = self.demonstrations[int(i)]
            path, flipped = reverse_augment(demo.path, rng, self.config.reverse_prob)
            batch.append(build_example(demo.scenario, self._cloud(demo.scenario), path, flipped))
        return batch

    def run(self, iterations: int, rng: np.random.Generator, start_iteration: int = 0,
            progress: bool = True) -> List[Dict[str, Any]]:
        rows = []
        bar = tqdm(range(iterations), desc='pretrain', disable=not progress)
        for i in bar:
            batch = self.sample_batch(rng)
            loss = self.optimizer.step(lambda: nll_loss(self.model, batch))
            iteration = start_iteration + i + 1
            rows.append({'iteration': iteration, 'loss': loss})
            if iteration % self.config.log_every == 0:
                bar.set_postfix(loss=f'{loss:.4f}')
                logger.info(f'pretrain iteration {iteration}: loss {loss:.5f}')
        return rows
