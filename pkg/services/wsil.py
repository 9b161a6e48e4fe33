"""Weighted self-imitation fine-tuning.

Each iteration plans one scenario, either with the learned bidirectional
planner or (with probability epsilon) with a uniform exploration planner,
stores successful paths in a FIFO buffer and takes one gradient step on the
sampler and one on the estimator. Demonstrations are weighted by how their
length compares with the estimator's prediction:

    w = 1 / (1 + exp(C_real - C_est - K))

K starts large and is divided by ``anneal_divisor`` every ``anneal_every``
iterations, so early on nearly everything imitates and later only paths
shorter than predicted do.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Any, Deque, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from services.autodiff import AdamState, Tensor
from services.config import PlannerConfig, TrainConfig, WsilConfig
from services.dataset import read_jsonl, write_jsonl
from services.environment import (Scenario, normalize_points, path_is_valid, scenario_from_dict,
                                  scenario_point_cloud, scenario_to_dict)
from services.estimator import EstimatorModel, estimator_batch_loss
from services.planner import LearnedSampler, UniformSampler, bi_rrt_star, rrt, rrt_star
from services.sampler_model import SamplerModel, TrainingExample, build_example, imitation_loss, reverse_augment
from services.training import Optimizer

logger = logging.getLogger(__name__)

WSIL_LOG_FIELDS = ['iteration', 'epsilon', 'K', 'buffer_len', 'success', 'mean_weight',
                   'sampler_loss', 'estimator_loss']

SOURCE_RRT = 'RRT'
SOURCE_LEARNED = 'SIL-RRT*'


@dataclass
class DemonstrationRecord:
    scenario: Scenario
    path: List[np.ndarray]
    c_real: float
    source: str = SOURCE_RRT

    @property
    def scenario_id(self) -> Optional[int]:
        return self.scenario.scenario_id

    def validate(self) -> bool:
        return (path_is_valid(self.scenario, self.path)
                and abs(self.scenario.space.path_cost(self.path) - self.c_real) <= 1e-9)

    def to_dict(self) -> Dict[str, Any]:
        return {'scenario': scenario_to_dict(self.scenario), 'path': [np.asarray(s).tolist() for s in self.path],
                'C_real': self.c_real, 'source': self.source}


class ReplayBuffer:
    """Bounded FIFO of successful demonstrations."""

    def __init__(self, capacity: int = 2048):
        if capacity < 1:
            raise ValueError(f'Buffer capacity must be >= 1, got {capacity}')
        self.capacity = capacity
        self._records: Deque[DemonstrationRecord] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def append(self, record: DemonstrationRecord) -> None:
        self._records.append(record)

    def sample(self, rng: np.random.Generator, n: int) -> List[DemonstrationRecord]:
        """Uniform with replacement."""
        if not self._records:
            raise ValueError('Cannot sample from an empty buffer')
        return [self._records[int(i)] for i in rng.integers(0, len(self._records), size=n)]

    def dump(self, path) -> None:
        write_jsonl(path, (r.to_dict() for r in self._records))
        logger.info(f'Dumped {len(self)} buffer records to {path}')

    @classmethod
    def restore(cls, path, capacity: int = 2048,
                scenarios: Optional[Iterable[Scenario]] = None) -> 'ReplayBuffer':
        known = {s.scenario_id: s for s in scenarios or () if s.scenario_id is not None}
        buffer = cls(capacity)
        for row in read_jsonl(path):
            sid = row['scenario'].get('scenario_id')
            scenario = known.get(sid) or scenario_from_dict(row['scenario'])
            buffer.append(DemonstrationRecord(scenario, [np.asarray(s, dtype=float) for s in row['path']],
                                              float(row['C_real']), row.get('source', SOURCE_RRT)))
        return buffer


WEIGHT_MIN = float(np.finfo(float).tiny)
WEIGHT_MAX = float(np.nextafter(1.0, 0.0))


def quality_weight(c_real: float, c_est: float, K: float) -> float:
    """Logistic weight, decreasing in C_real and increasing in C_est and K.

    Clipped into the open interval (0, 1).
    """
    x = float(c_real) - float(c_est) - float(K)
    if x >= 0:
        z = math.exp(-x)
        w = z / (1.0 + z)
    else:
        w = 1.0 / (1.0 + math.exp(x))
    return min(max(w, WEIGHT_MIN), WEIGHT_MAX)


def anneal_K(K: float, step: int, config: WsilConfig) -> float:
    if K <= 0:
        raise ValueError(f'K must be positive, got {K}')
    if step > 0 and step % config.anneal_every == 0:
        return max(K / config.anneal_divisor, config.K_floor)
    return K


def wsil_loss(model: SamplerModel, examples: Sequence[TrainingExample], weights: Sequence[float],
              lambda_entropy: float) -> Tensor:
    """Weighted imitation loss with an entropy bonus; weights must lie in [0, 1]."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(examples),):
        raise ValueError(f'{w.size} weights for {len(examples)} examples')
    if not np.all(np.isfinite(w)) or np.any(w < 0.0) or np.any(w > 1.0):
        raise ValueError(f'Quality weights must lie in [0, 1], got {w.tolist()}')
    if not math.isfinite(lambda_entropy) or lambda_entropy < 0:
        raise ValueError(f'lambda_entropy must be finite and >= 0, got {lambda_entropy}')
    return imitation_loss(model, examples, w.tolist(), lambda_entropy)


class WsilTrainer:
    """Runs the fine-tuning loop and owns the buffer and both optimizers.

    ``iteration`` counts completed iterations; a trainer built with
    ``start_iteration``, ``K`` and saved optimizer states continues the
    epsilon and K schedules where an earlier run stopped.
    """

    def __init__(self, sampler: SamplerModel, estimator: EstimatorModel, scenarios: Sequence[Scenario],
                 config: WsilConfig, planner_config: PlannerConfig, train_config: TrainConfig,
                 point_cloud_size: int, buffer: Optional[ReplayBuffer] = None,
                 sampler_state: Optional[AdamState] = None, estimator_state: Optional[AdamState] = None,
                 start_iteration: int = 0, K: Optional[float] = None):
        if not scenarios:
            raise ValueError('Fine-tuning needs at least one scenario')
        if start_iteration < 0:
            raise ValueError(f'start_iteration must be >= 0, got {start_iteration}')
        self.sampler = sampler
        self.estimator = estimator
        self.scenarios = list(scenarios)
        self.config = config
        self.planner_config = planner_config
        self.train_config = train_config
        self.point_cloud_size = point_cloud_size
        self.buffer = buffer if buffer is not None else ReplayBuffer(config.buffer_capacity)
        self.sampler_opt = Optimizer(sampler, train_config, sampler_state)
        self.estimator_opt = Optimizer(estimator, train_config, estimator_state)
        self.iteration = start_iteration
        self.K = config.K0 if K is None else float(K)
        if self.K <= 0:
            raise ValueError(f'K must be positive, got {self.K}')
        # id(scenario) -> (raw cloud, normalized cloud)
        self._clouds: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}

    def _cloud_pair(self, scenario: Scenario) -> Tuple[np.ndarray, np.ndarray]:
        key = id(scenario)
        if key not in self._clouds:
            cloud = scenario_point_cloud(scenario, self.point_cloud_size)
            self._clouds[key] = (cloud, normalize_points(scenario.workspace, cloud))
        return self._clouds[key]

    def _cloud(self, scenario: Scenario) -> np.ndarray:
        return self._cloud_pair(scenario)[0]

    def _points(self, scenario: Scenario) -> np.ndarray:
        return self._cloud_pair(scenario)[1]

    def state_meta(self) -> Dict[str, Any]:
        return {'iteration': self.iteration, 'K': self.K}

    def collect(self, scenario: Scenario, epsilon: float, rng: np.random.Generator):
        plan_rng = np.random.default_rng(int(rng.integers(0, 2 ** 63 - 1)))
        if rng.random() > epsilon:
            learned = LearnedSampler(self.sampler, self.point_cloud_size, self.planner_config.learned_failure_limit)
            return bi_rrt_star(scenario, learned, learned, self.planner_config, plan_rng), SOURCE_LEARNED
        explore = rrt if self.config.exploration_planner == 'rrt' else rrt_star
        uniform = UniformSampler(self.planner_config.goal_bias)
        return explore(scenario, uniform, self.planner_config, plan_rng), SOURCE_RRT

    def estimate(self, record: DemonstrationRecord) -> float:
        scenario = record.scenario
        space = scenario.space
        return self.estimator.predict(self._points(scenario), space.normalize_for_model(scenario.start),
                                      space.normalize_for_model(scenario.goal))

    def train_step(self, rng: np.random.Generator) -> Dict[str, Any]:
        records = self.buffer.sample(rng, self.config.batch_size)
        weights = [quality_weight(r.c_real, self.estimate(r), self.K) for r in records]
        examples = []
        for record in records:
            path, flipped = reverse_augment(record.path, rng, self.train_config.reverse_prob)
            examples.append(build_example(record.scenario, self._cloud(record.scenario), path, flipped))
        sampler_loss = self.sampler_opt.step(
            lambda: wsil_loss(self.sampler, examples, weights, self.config.lambda_entropy))
        est_batch = []
        for record in records:
            space = record.scenario.space
            est_batch.append((self._points(record.scenario), space.normalize_for_model(record.scenario.start),
                              space.normalize_for_model(record.scenario.goal), record.c_real))
        estimator_loss = self.estimator_opt.step(lambda: estimator_batch_loss(self.estimator, est_batch))
        return {'mean_weight': float(np.mean(weights)), 'sampler_loss': sampler_loss,
                'estimator_loss': estimator_loss, 'weights': weights}

    def run(self, rng: np.random.Generator, iterations: Optional[int] = None,
            progress: bool = True) -> List[Dict[str, Any]]:
        """Run ``iterations`` more iterations (default: the rest of ``total_iterations``).

        Rows hold WSIL_LOG_FIELDS plus the batch ``weights`` of that step.
        """
        n = max(self.config.total_iterations - self.iteration, 0) if iterations is None else iterations
        rows = []
        bar = tqdm(range(self.iteration, self.iteration + n), desc='finetune', disable=not progress)
        for i in bar:
            epsilon = self.config.epsilon(i)
            scenario = self.scenarios[int(rng.integers(0, len(self.scenarios)))]
            result, source = self.collect(scenario, epsilon, rng)
            if result.success:
                self.buffer.append(DemonstrationRecord(scenario, result.path, result.path_length, source))
            row = {'iteration': i, 'epsilon': epsilon, 'K': self.K, 'buffer_len': len(self.buffer),
                   'success': int(result.success)}
            if len(self.buffer) == 0:
                logger.info(f'finetune iteration {i}: buffer empty, skipping gradient step')
                row.update(mean_weight=math.nan, sampler_loss=math.nan, estimator_loss=math.nan, weights=[])
            else:
                row.update(self.train_step(rng))
            rows.append(row)
            self.K = anneal_K(self.K, i + 1, self.config)
            self.iteration = i + 1
            if (i + 1) % self.train_config.log_every == 0:
                bar.set_postfix(K=f'{self.K:.3g}', buf=len(self.buffer))
                logger.info(f"finetune iteration {i + 1}: eps {epsilon:.3f} K {row['K']:.4g} "
                            f"buffer {len(self.buffer)} sampler loss {row['sampler_loss']:.4f}")
        return rows
