"""Demonstration datasets and the small file helpers shared by the commands.

A dataset is a directory:

    manifest.json     generation parameters, seeds, counts, preset name
    scenarios.jsonl   one scenario per line, tagged with workspace and split
    paths.jsonl       one successful uniform-RRT* path per line

Held-out scenarios come from workspaces never seen in training: the split is
drawn per workspace, not per scenario.
"""
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from services.config import EnvironmentConfig, planner_config_for
from services.environment import (AgentGeometry, GenerationError, Scenario, generate_scenario,
                                  generate_workspace, make_space, path_is_valid, scenario_from_dict,
                                  scenario_to_dict)
from services.planner import UniformSampler, rrt_star

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = 'manifest.json'
SCENARIOS = 'scenarios.jsonl'
PATHS = 'paths.jsonl'

ENV_TO_SPACE = {'2d': 'point2d', 'rigid': 'rigid2d', '3d': 'point3d', 'snake': 'snake'}


class DatasetError(IOError):
    """Dataset directory or record file that cannot be read or written."""


# ----------------------------------------------------------------------
# File helpers
# ----------------------------------------------------------------------

def write_jsonl(path, records: Iterable[Dict[str, Any]]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w', encoding='utf-8', newline='\n') as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True) + '\n')
    except OSError as exc:
        raise DatasetError(f'Cannot write {path}: {exc}') from exc
    return path


def read_jsonl(path) -> List[Dict[str, Any]]:
    path = Path(path)
    try:
        with path.open('r', encoding='utf-8') as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise DatasetError(f'Cannot read {path}: {exc}') from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f'{path} is not valid JSON lines: {exc}') from exc


def write_json(path, data: Dict[str, Any]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    except OSError as exc:
        raise DatasetError(f'Cannot write {path}: {exc}') from exc
    return path


def read_json(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding='utf-8'))
    except OSError as exc:
        raise DatasetError(f'Cannot read {path}: {exc}') from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f'{path} is not valid JSON: {exc}') from exc


def write_csv(path, fieldnames: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w', encoding='utf-8', newline='') as fh:
            writer = csv.DictWriter(fh, fieldnames=list(fieldnames), extrasaction='ignore', lineterminator='\n')
            writer.writeheader()
            for row in rows:
                writer.writerow({k: row.get(k, '') for k in fieldnames})
    except OSError as exc:
        raise DatasetError(f'Cannot write {path}: {exc}') from exc
    return path


def read_csv(path) -> List[Dict[str, str]]:
    path = Path(path)
    try:
        with path.open('r', encoding='utf-8', newline='') as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise DatasetError(f'Cannot read {path}: {exc}') from exc


# ----------------------------------------------------------------------
# Dataset
# ----------------------------------------------------------------------

@dataclass
class DatasetEntry:
    scenario_id: int
    path: List[np.ndarray]
    c_real: float
    split: str = 'train'

    def to_dict(self) -> Dict[str, Any]:
        return {'scenario_id': self.scenario_id, 'path': [s.tolist() for s in self.path],
                'C_real': self.c_real, 'split': self.split}


@dataclass
class Dataset:
    manifest: Dict[str, Any]
    scenarios: Dict[int, Scenario]
    splits: Dict[int, str]
    entries: List[DatasetEntry] = field(default_factory=list)
    root: Optional[Path] = None

    def scenarios_for(self, split: Optional[str] = None) -> List[Scenario]:
        return [s for sid, s in sorted(self.scenarios.items()) if split is None or self.splits[sid] == split]

    def entries_for(self, split: Optional[str] = None) -> List[DatasetEntry]:
        return [e for e in self.entries if split is None or e.split == split]

    def validate(self) -> List[str]:
        """Entries whose path no longer checks out against its scenario."""
        problems = []
        for entry in self.entries:
            scenario = self.scenarios.get(entry.scenario_id)
            if scenario is None:
                problems.append(f'path for unknown scenario {entry.scenario_id}')
                continue
            if not path_is_valid(scenario, entry.path):
                problems.append(f'path for scenario {entry.scenario_id} is not collision-free')
            elif abs(scenario.space.path_cost(entry.path) - entry.c_real) > 1e-9:
                problems.append(f'C_real of scenario {entry.scenario_id} disagrees with its path')
        return problems

    def save(self, root) -> Path:
        root = Path(root)
        scenario_rows = []
        for sid, scenario in sorted(self.scenarios.items()):
            row = scenario_to_dict(scenario)
            row['split'] = self.splits[sid]
            scenario_rows.append(row)
        write_jsonl(root / SCENARIOS, scenario_rows)
        write_jsonl(root / PATHS, (e.to_dict() for e in self.entries))
        write_json(root / MANIFEST, self.manifest)
        self.root = root
        logger.info(f'Wrote dataset with {len(self.scenarios)} scenarios and {len(self.entries)} paths to {root}')
        return root


def load_dataset(root) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f'{root} is not a dataset directory')
    manifest = read_json(root / MANIFEST)
    if manifest.get('format_version') != FORMAT_VERSION:
        raise DatasetError(f"Unsupported dataset format {manifest.get('format_version')}")
    scenarios: Dict[int, Scenario] = {}
    splits: Dict[int, str] = {}
    for row in read_jsonl(root / SCENARIOS):
        scenario = scenario_from_dict(row)
        scenarios[scenario.scenario_id] = scenario
        splits[scenario.scenario_id] = row.get('split', 'train')
    entries = [DatasetEntry(int(row['scenario_id']), [np.asarray(s, dtype=float) for s in row['path']],
                            float(row['C_real']), row.get('split', 'train'))
               for row in read_jsonl(root / PATHS)]
    return Dataset(manifest, scenarios, splits, entries, root)


def load_scenarios(path, split: Optional[str] = None) -> List[Scenario]:
    """Scenarios from a dataset directory (optionally one split) or a scenarios JSON-lines file."""
    path = Path(path)
    if path.is_dir():
        return load_dataset(path).scenarios_for(split)
    rows = read_jsonl(path)
    return [scenario_from_dict(row) for row in rows if split is None or row.get('split', split) == split]


def _scenario_seed(seed: int, workspace_id: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, workspace_id, index]).generate_state(1)[0])


def generate_dataset(env: str, workspaces: int, scenarios_per: int, obstacles: int, seed: int,
                     env_config: Optional[EnvironmentConfig] = None, max_samples: int = 2000,
                     test_fraction: float = 0.2, preset: Optional[str] = None,
                     progress: bool = True) -> Dataset:
    """Random workspaces and scenarios, each solved by uniform RRT* with a generous budget."""
    if env not in ENV_TO_SPACE:
        raise ValueError(f"Unknown environment '{env}', expected one of {sorted(ENV_TO_SPACE)}")
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError(f'test_fraction must lie in [0, 1), got {test_fraction}')
    env_config = env_config or EnvironmentConfig()
    kind = ENV_TO_SPACE[env]
    ambient = 3 if kind == 'point3d' else 2
    agent = AgentGeometry.for_space(kind, env_config)
    planner_config = planner_config_for(kind, learned=False, max_samples=max_samples,
                                        collision_step=env_config.collision_step)

    order = np.random.default_rng([seed, workspaces]).permutation(workspaces)
    n_test = int(round(test_fraction * workspaces))
    test_ids = set(int(w) for w in order[:n_test])

    scenarios: Dict[int, Scenario] = {}
    splits: Dict[int, str] = {}
    entries: List[DatasetEntry] = []
    skipped = 0
    bar = tqdm(total=workspaces * scenarios_per, desc=f'gen-data {env}', disable=not progress)
    for w in range(workspaces):
        split = 'test' if w in test_ids else 'train'
        ws_rng = np.random.default_rng([seed, w])
        bounds = np.tile(np.array([0.0, env_config.extent]), (ambient, 1))
        workspace = generate_workspace(ws_rng, ambient, obstacles, env_config.size_range, bounds)
        space = make_space(kind, workspace, env_config.angular_weight)
        for s in range(scenarios_per):
            bar.update(1)
            sid = w * scenarios_per + s
            scenario_seed = _scenario_seed(seed, w, s)
            try:
                scenario = generate_scenario(np.random.default_rng(scenario_seed), workspace, space, agent,
                                             env_config.goal_radius, env_config.collision_step,
                                             seed=scenario_seed, scenario_id=sid)
            except GenerationError as exc:
                logger.warning(f'Skipping scenario {sid}: {exc}')
                skipped += 1
                continue
            scenarios[sid] = scenario
            splits[sid] = split
            result = rrt_star(scenario, UniformSampler(planner_config.goal_bias), planner_config,
                              np.random.default_rng([scenario_seed, 1]))
            if result.success:
                entries.append(DatasetEntry(sid, result.path, result.path_length, split))
    bar.close()

    success_rate = len(entries) / len(scenarios) if scenarios else 0.0
    manifest = {
        'format_version': FORMAT_VERSION,
        'preset': preset,
        'env': env,
        'space': kind,
        'workspaces': workspaces,
        'scenarios_per': scenarios_per,
        'obstacles': obstacles,
        'seed': seed,
        'max_samples': max_samples,
        'test_fraction': test_fraction,
        'environment': env_config.model_dump(mode='json'),
        'planner': planner_config.model_dump(mode='json'),
        'counts': {
            'scenarios': len(scenarios),
            'skipped_scenarios': skipped,
            'paths': len(entries),
            'train_paths': sum(e.split == 'train' for e in entries),
            'test_scenarios': sum(v == 'test' for v in splits.values()),
        },
        'collection_success_rate': success_rate,
    }
    logger.info(f'Collected {len(entries)}/{len(scenarios)} paths ({100 * success_rate:.1f}% success)')
    return Dataset(manifest, scenarios, splits, entries)


def regenerate_from_manifest(manifest: Dict[str, Any], progress: bool = False) -> Dataset:
    """Rebuild a dataset from nothing but its manifest."""
    return generate_dataset(
        manifest['env'], manifest['workspaces'], manifest['scenarios_per'], manifest['obstacles'],
        manifest['seed'], EnvironmentConfig.model_validate(manifest['environment']),
        manifest['max_samples'], manifest['test_fraction'], manifest.get('preset'), progress=progress,
    )
