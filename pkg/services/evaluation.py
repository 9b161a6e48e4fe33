"""Benchmark harness: run planners over scenarios and summarize the metrics."""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from services.config import DEFAULT_POINT_CLOUD_SIZE, planner_config_for
from services.environment import Scenario
from services.planner import LearnedSampler, PlanResult, UniformSampler, bi_rrt_star, rrt, rrt_star
from services.sampler_model import SamplerModel

logger = logging.getLogger(__name__)

POPULATION_RULE = 'success-conditioned'

REPORT_FIELDS = ['environment', 'planner', 'queries', 'successes', 'success_rate',
                 'avg_samples', 'std_samples', 'avg_path_length', 'std_path_length',
                 'avg_time', 'std_time', 'population', 'preset', 'seed']
TIME_FIELDS = ('avg_time', 'std_time')

UNIFORM_PLANNERS = ('rrtstar', 'rrt', 'birrtstar')
LEARNED_PLANNERS = ('silrrt', 'silrrt-wsil')


def query_seed(master_seed: int, scenario_id: int, trial: int, planner_index: int) -> int:
    """Independent stream per (scenario, trial, planner)."""
    return int(np.random.SeedSequence([master_seed, scenario_id, trial, planner_index]).generate_state(1)[0])


@dataclass
class PlannerSpec:
    name: str
    model: Optional[SamplerModel] = None

    @property
    def learned(self) -> bool:
        return self.name in LEARNED_PLANNERS

    def run(self, scenario: Scenario, max_samples: Optional[int], rng: np.random.Generator,
            point_cloud_size: int = DEFAULT_POINT_CLOUD_SIZE) -> PlanResult:
        overrides = {'collision_step': scenario.collision_step}
        if max_samples is not None:
            overrides['max_samples'] = max_samples
        config = planner_config_for(scenario.space.kind.value, self.learned, **overrides)
        if self.learned:
            if self.model is None:
                raise ValueError(f"Planner '{self.name}' needs a sampler checkpoint")
            sampler = LearnedSampler(self.model, point_cloud_size, config.learned_failure_limit)
            result = bi_rrt_star(scenario, sampler, sampler, config, rng)
        elif self.name == 'rrtstar':
            result = rrt_star(scenario, UniformSampler(config.goal_bias), config, rng)
        elif self.name == 'rrt':
            result = rrt(scenario, UniformSampler(config.goal_bias), config, rng)
        elif self.name == 'birrtstar':
            uniform = UniformSampler(config.goal_bias)
            result = bi_rrt_star(scenario, uniform, uniform, config, rng)
        else:
            raise ValueError(f"Unknown planner '{self.name}'")
        result.planner = self.name
        return result


@dataclass
class EvalReport:
    rows: List[Dict[str, Any]]
    records: List[Dict[str, Any]] = field(default_factory=list)
    population: str = POPULATION_RULE


def _mean_std(values: Sequence[float]):
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def summarize(records: Sequence[Dict[str, Any]], preset: Optional[str] = None,
              seed: Optional[int] = None) -> List[Dict[str, Any]]:
    """One row per (environment, planner); averages cover successful queries only."""
    groups: Dict[tuple, List[Dict[str, Any]]] = {}
    for rec in records:
        groups.setdefault((rec['environment'], rec['planner']), []).append(rec)
    rows = []
    for (environment, planner), recs in groups.items():
        ok = [r for r in recs if r['success']]
        avg_s, std_s = _mean_std([r['samples_generated'] for r in ok])
        avg_l, std_l = _mean_std([r['path_length'] for r in ok])
        avg_t, std_t = _mean_std([r['wall_time'] for r in ok])
        rows.append({
            'environment': environment, 'planner': planner, 'queries': len(recs), 'successes': len(ok),
            'success_rate': 100.0 * len(ok) / len(recs),
            'avg_samples': avg_s, 'std_samples': std_s,
            'avg_path_length': avg_l, 'std_path_length': std_l,
            'avg_time': avg_t, 'std_time': std_t,
            'population': POPULATION_RULE, 'preset': preset, 'seed': seed,
        })
    return rows


class EvaluationService:
    """Runs every planner on every scenario ``trials`` times, in parallel."""

    def __init__(self, planners: Sequence[PlannerSpec], trials: int = 3, seed: int = 0,
                 max_samples: Optional[int] = None, threads: Optional[int] = None,
                 point_cloud_size: int = DEFAULT_POINT_CLOUD_SIZE, preset: Optional[str] = None,
                 keep_trees: bool = False):
        if trials < 1:
            raise ValueError(f'trials must be >= 1, got {trials}')
        self.planners = list(planners)
        self.trials = trials
        self.seed = seed
        self.max_samples = max_samples
        self.threads = max(1, threads or os.cpu_count() or 1)
        self.point_cloud_size = point_cloud_size
        self.preset = preset
        self.keep_trees = keep_trees

    def _query(self, scenario: Scenario, trial: int, planner_index: int) -> Dict[str, Any]:
        spec = self.planners[planner_index]
        sid = scenario.scenario_id if scenario.scenario_id is not None else 0
        seed = query_seed(self.seed, sid, trial, planner_index)
        result = spec.run(scenario, self.max_samples, np.random.default_rng(seed), self.point_cloud_size)
        result.seed = seed
        record = result.to_dict(include_trees=self.keep_trees)
        record.update(environment=scenario.space.kind.value, scenario_id=sid, trial=trial)
        return record

    def run(self, scenarios: Sequence[Scenario], progress: bool = True,
            on_record: Optional[Callable[[Dict[str, Any]], None]] = None) -> EvalReport:
        jobs = [(s, t, p) for s in scenarios for t in range(self.trials) for p in range(len(self.planners))]
        logger.info(f'Evaluating {len(self.planners)} planners x {len(scenarios)} scenarios x '
                    f'{self.trials} trials on {self.threads} threads')
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            futures = [pool.submit(self._query, *job) for job in jobs]
            records = [f.result() for f in tqdm(futures, desc='evaluate', disable=not progress)]
        if on_record:
            for rec in records:
                on_record(rec)
        return EvalReport(summarize(records, self.preset, self.seed), records)
