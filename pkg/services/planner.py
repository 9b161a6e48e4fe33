"""RRT, RRT* and bidirectional RRT* with pluggable samplers.

Every planner returns a ``PlanResult``; running out of budget is a failed
result, not an exception. ``samples_generated`` counts accepted tree
insertions. Rejected samples only count toward the hard attempt cap
(``PlannerConfig.max_attempts``).
"""
import logging
import math
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from services.config import DEFAULT_POINT_CLOUD_SIZE, PlannerConfig
from services.environment import Scenario, edge_in_collision, normalize_points, scenario_point_cloud
from services.geometry import StateSpace
from services.sampler_model import sample_next

logger = logging.getLogger(__name__)

ZERO_EDGE = 1e-12


# ----------------------------------------------------------------------
# Tree
# ----------------------------------------------------------------------

class Tree:
    """Search tree with cost-to-come bookkeeping. Node 0 is the root."""

    def __init__(self, space: StateSpace, root, capacity: int = 256):
        self.space = space
        self._states = np.empty((max(capacity, 1), space.dim))
        self._states[0] = space.check_dim(root)
        self.parents: List[int] = [-1]
        self.costs: List[float] = [0.0]
        self.children: List[List[int]] = [[]]

    def __len__(self) -> int:
        return len(self.parents)

    @property
    def size(self) -> int:
        return len(self.parents)

    @property
    def states(self) -> np.ndarray:
        return self._states[:self.size]

    @property
    def root(self) -> np.ndarray:
        return self._states[0]

    def state(self, idx: int) -> np.ndarray:
        return self._states[idx]

    def add(self, state, parent: int, cost: float) -> int:
        idx = self.size
        if idx == self._states.shape[0]:
            grown = np.empty((2 * idx, self.space.dim))
            grown[:idx] = self._states
            self._states = grown
        self._states[idx] = state
        self.parents.append(parent)
        self.costs.append(float(cost))
        self.children.append([])
        self.children[parent].append(idx)
        return idx

    def nearest(self, state) -> int:
        return int(np.argmin(self.space.distance_many(self.states, state)))

    def near(self, state, radius: float) -> np.ndarray:
        return np.flatnonzero(self.space.distance_many(self.states, state) <= radius)

    def is_ancestor(self, ancestor: int, idx: int) -> bool:
        while idx != -1:
            if idx == ancestor:
                return True
            idx = self.parents[idx]
        return False

    def reparent(self, idx: int, new_parent: int) -> None:
        """Move ``idx`` under ``new_parent`` and refresh the cost of its whole subtree."""
        if idx == 0:
            raise ValueError('The root cannot be re-parented')
        if self.is_ancestor(idx, new_parent):
            raise ValueError(f'Re-parenting {idx} under {new_parent} would create a cycle')
        self.children[self.parents[idx]].remove(idx)
        self.parents[idx] = new_parent
        self.children[new_parent].append(idx)
        stack = [idx]
        while stack:
            node = stack.pop()
            parent = self.parents[node]
            self.costs[node] = self.costs[parent] + self.space.distance(self._states[parent], self._states[node])
            stack.extend(self.children[node])

    def branch(self, idx: int) -> List[np.ndarray]:
        """States from the root down to ``idx``."""
        chain = []
        while idx != -1:
            chain.append(self._states[idx].copy())
            idx = self.parents[idx]
        chain.reverse()
        return chain

    def edges(self) -> List[Tuple[int, int]]:
        return [(p, i) for i, p in enumerate(self.parents) if p >= 0]

    def audit(self, tol: float = 1e-9) -> List[str]:
        """Broken invariants, empty when the tree is consistent."""
        problems = []
        if self.parents[0] != -1 or self.costs[0] != 0.0:
            problems.append('root must have no parent and zero cost')
        for i in range(1, self.size):
            p = self.parents[i]
            if not 0 <= p < self.size:
                problems.append(f'node {i} has invalid parent {p}')
                continue
            expected = self.costs[p] + self.space.distance(self._states[p], self._states[i])
            if abs(self.costs[i] - expected) > tol:
                problems.append(f'node {i} cost {self.costs[i]} != {expected}')
            if i not in self.children[p]:
                problems.append(f'node {i} missing from children of {p}')
        # every node must reach the root in fewer than size steps
        for i in range(self.size):
            steps, node = 0, i
            while node != -1 and steps <= self.size:
                node = self.parents[node]
                steps += 1
            if node != -1:
                problems.append(f'node {i} sits on a parent cycle')
                break
        return problems

    def to_dict(self) -> Dict[str, Any]:
        return {'states': self.states.tolist(), 'parents': list(self.parents)}


def extract_path(tree: Tree, goal_node: int) -> List[np.ndarray]:
    if not 0 <= goal_node < tree.size:
        raise ValueError(f'Node {goal_node} is not in the tree')
    return tree.branch(goal_node)


def path_cost(space: StateSpace, path: List[np.ndarray]) -> float:
    return space.path_cost(path)


# ----------------------------------------------------------------------
# Results
# ----------------------------------------------------------------------

@dataclass
class PlanResult:
    success: bool
    path: Optional[List[np.ndarray]] = None
    path_length: Optional[float] = None
    samples_generated: int = 0
    collision_checks: int = 0
    wall_time: float = 0.0
    planner: str = ''
    seed: Optional[int] = None
    config: Dict[str, Any] = field(default_factory=dict)
    trees: List[Tree] = field(default_factory=list, repr=False)

    def to_dict(self, include_trees: bool = False) -> Dict[str, Any]:
        data = {
            'planner': self.planner,
            'success': self.success,
            'path': None if self.path is None else [np.asarray(s).tolist() for s in self.path],
            'path_length': self.path_length,
            'samples_generated': self.samples_generated,
            'collision_checks': self.collision_checks,
            'wall_time': self.wall_time,
            'seed': self.seed,
            'config': self.config,
        }
        if include_trees:
            data['trees'] = [t.to_dict() for t in self.trees]
        return data


# ----------------------------------------------------------------------
# Samplers
# ----------------------------------------------------------------------

class SamplerPort(ABC):
    """Source of candidate states for one tree expansion."""

    name = 'sampler'

    def prepare(self, scenario: Scenario) -> None:
        """Called once per planning query before the first sample."""

    @abstractmethod
    def next_sample(self, tree: Tree, target, scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
        """Candidate state for ``tree``; ``target`` is the state the tree is heading for."""

    def feedback(self, tree: Tree, accepted: bool) -> None:
        """Told whether the last sample for ``tree`` produced an insertion."""


class UniformSampler(SamplerPort):
    name = 'uniform'

    def __init__(self, goal_bias: float = 0.05):
        self.goal_bias = goal_bias

    def next_sample(self, tree, target, scenario, rng):
        if rng.random() < self.goal_bias:
            return np.array(target, dtype=float)
        return scenario.space.sample_uniform(rng)


@dataclass
class _TreeContext:
    decoded_size: int = -1
    step: Any = None
    failures: int = 0


class LearnedSampler(SamplerPort):
    """Samples from the sampler network, conditioned on the newest branch of the tree.

    The latent array of the scenario is computed once per query and each
    decoder output is reused until the tree grows. After
    ``failure_limit`` consecutive rejected samples one uniform sample is
    drawn instead.
    """

    name = 'learned'

    def __init__(self, model, point_cloud_size: int = DEFAULT_POINT_CLOUD_SIZE,
                 failure_limit: int = 20, conditioning: Optional[str] = None):
        self.model = model
        self.point_cloud_size = point_cloud_size
        self.failure_limit = failure_limit
        self.conditioning = conditioning or model.config.conditioning
        self._scenario = None
        self._Z = None
        self._trees: Dict[int, _TreeContext] = {}

    def prepare(self, scenario: Scenario) -> None:
        self._trees = {}
        if self._scenario is scenario:
            return
        cloud = scenario_point_cloud(scenario, self.point_cloud_size)
        self._Z = self.model.encode_state_space(normalize_points(scenario.workspace, cloud))
        self._scenario = scenario

    def _context(self, tree: Tree) -> _TreeContext:
        return self._trees.setdefault(id(tree), _TreeContext())

    def _conditioning_nodes(self, tree: Tree) -> List[np.ndarray]:
        window = self.model.config.context_window
        if self.conditioning == 'insertion':
            return [tree.state(i) for i in range(max(0, tree.size - window), tree.size)]
        return tree.branch(tree.size - 1)

    def next_sample(self, tree, target, scenario, rng):
        if self._scenario is not scenario:
            self.prepare(scenario)
        ctx = self._context(tree)
        if ctx.failures >= self.failure_limit:
            ctx.failures = 0
            return scenario.space.sample_uniform(rng)
        if ctx.decoded_size != tree.size:
            space = scenario.space
            nodes = np.vstack([space.normalize_for_model(s) for s in self._conditioning_nodes(tree)])
            ctx.step = self.model.decode_next(self._Z, space.normalize_for_model(target), nodes)
            ctx.decoded_size = tree.size
        return sample_next(ctx.step, scenario.space, rng)

    def feedback(self, tree, accepted):
        ctx = self._context(tree)
        ctx.failures = 0 if accepted else ctx.failures + 1


# ----------------------------------------------------------------------
# Search
# ----------------------------------------------------------------------

def rewire_gamma(space: StateSpace) -> float:
    """Smallest rewiring constant that keeps RRT* asymptotically optimal over the whole space."""
    d = space.dim
    unit_ball = math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)
    return 2.0 * (1.0 + 1.0 / d) ** (1.0 / d) * (space.measure / unit_ball) ** (1.0 / d)


def near_radius(config: PlannerConfig, n: int, space: StateSpace) -> float:
    if n < 2:
        return 0.0
    gamma = config.gamma_rewire if config.gamma_rewire is not None else rewire_gamma(space)
    return min(config.step_size, gamma * (math.log(n) / n) ** (1.0 / space.dim))


class _Counters:
    def __init__(self):
        self.inserted = 0
        self.attempts = 0
        self.checks = 0


def _edge_free(scenario: Scenario, a, b, config: PlannerConfig, counters: _Counters) -> bool:
    counters.checks += 1
    return not edge_in_collision(scenario, a, b, config.collision_step)


def _extend(tree: Tree, target, scenario: Scenario, sampler: SamplerPort, config: PlannerConfig,
            rng: np.random.Generator, counters: _Counters, optimize: bool) -> Optional[int]:
    """One sample-steer-insert attempt; returns the new node index or None."""
    space = scenario.space
    counters.attempts += 1
    x_rand = sampler.next_sample(tree, target, scenario, rng)
    i_near = tree.nearest(x_rand)
    x_near = tree.state(i_near)
    x_new = space.steer(x_near, x_rand, config.step_size)
    d_near = space.distance(x_near, x_new)
    if d_near < ZERO_EDGE or not _edge_free(scenario, x_near, x_new, config, counters):
        sampler.feedback(tree, False)
        return None

    parent, parent_cost = i_near, tree.costs[i_near] + d_near
    near: np.ndarray = np.empty(0, dtype=int)
    if optimize:
        near = tree.near(x_new, near_radius(config, tree.size + 1, space))
        candidates = sorted((tree.costs[j] + space.distance(tree.state(j), x_new), int(j))
                            for j in near if j != i_near)
        for cost, j in candidates:
            if cost >= parent_cost:
                break
            if _edge_free(scenario, tree.state(j), x_new, config, counters):
                parent, parent_cost = j, cost
                break

    idx = tree.add(x_new, parent, parent_cost)
    counters.inserted += 1
    sampler.feedback(tree, True)

    if optimize:
        for j in near:
            j = int(j)
            if j == parent:
                continue
            cost = tree.costs[idx] + space.distance(x_new, tree.state(j))
            if cost < tree.costs[j] and not tree.is_ancestor(j, idx):
                if _edge_free(scenario, x_new, tree.state(j), config, counters):
                    tree.reparent(j, idx)
    return idx


def _best_goal_node(tree: Tree, scenario: Scenario) -> Optional[int]:
    dists = scenario.space.distance_many(tree.states, scenario.goal)
    inside = np.flatnonzero(dists <= scenario.goal_radius)
    if inside.size == 0:
        return None
    return int(inside[np.argmin(np.asarray(tree.costs)[inside])])


def _grow_single(scenario: Scenario, sampler: SamplerPort, config: PlannerConfig,
                 rng: np.random.Generator, optimize: bool, name: str) -> PlanResult:
    started = time.perf_counter()
    sampler.prepare(scenario)
    tree = Tree(scenario.space, scenario.start)
    counters = _Counters()
    reached = False
    while counters.inserted < config.max_samples and counters.attempts < config.max_attempts:
        idx = _extend(tree, scenario.goal, scenario, sampler, config, rng, counters, optimize)
        if idx is not None and scenario.in_goal_region(tree.state(idx)):
            reached = True
            if not config.refine_to_budget:
                break
    goal_node = _best_goal_node(tree, scenario) if reached else None
    result = PlanResult(success=goal_node is not None, planner=name,
                        samples_generated=counters.inserted, collision_checks=counters.checks,
                        config=config.model_dump(mode='json'), trees=[tree])
    if goal_node is not None:
        result.path = extract_path(tree, goal_node)
        result.path_length = scenario.space.path_cost(result.path)
    if counters.attempts >= config.max_attempts and counters.inserted < config.max_samples:
        logger.debug(f'{name}: attempt cap {config.max_attempts} hit after {counters.inserted} insertions')
    result.wall_time = time.perf_counter() - started
    return result


def rrt(scenario: Scenario, sampler: SamplerPort, config: PlannerConfig,
        rng: np.random.Generator) -> PlanResult:
    """Plain RRT: nearest-neighbour extension, no parent choice or rewiring."""
    return _grow_single(scenario, sampler, config, rng, optimize=False, name='rrt')


def rrt_star(scenario: Scenario, sampler: SamplerPort, config: PlannerConfig,
             rng: np.random.Generator) -> PlanResult:
    return _grow_single(scenario, sampler, config, rng, optimize=True, name='rrtstar')


def bi_rrt_star(scenario: Scenario, sampler_fwd: SamplerPort, sampler_bwd: SamplerPort,
                config: PlannerConfig, rng: np.random.Generator, name: str = 'birrtstar') -> PlanResult:
    """Alternate RRT* expansions of a start tree and a goal tree until they connect.

    After every insertion the new node tries to join the nearest node of the
    other tree (within ``step_size``, collision-free edge). A start-tree node
    inside the goal region also ends the search.
    """
    started = time.perf_counter()
    space = scenario.space
    sampler_fwd.prepare(scenario)
    sampler_bwd.prepare(scenario)
    fwd = Tree(space, scenario.start)
    bwd = Tree(space, scenario.goal)
    counters = _Counters()
    # (fwd node, bwd node or None when the fwd node is itself in the goal region)
    joins: List[Tuple[int, Optional[int]]] = []
    forward_turn = True
    while counters.inserted < config.max_samples and counters.attempts < config.max_attempts:
        if forward_turn:
            tree, other, sampler, target = fwd, bwd, sampler_fwd, scenario.goal
        else:
            tree, other, sampler, target = bwd, fwd, sampler_bwd, scenario.start
        forward_turn = not forward_turn
        idx = _extend(tree, target, scenario, sampler, config, rng, counters, optimize=True)
        if idx is None:
            continue
        x_new = tree.state(idx)
        if tree is fwd and scenario.in_goal_region(x_new):
            joins.append((idx, None))
        else:
            j = other.nearest(x_new)
            if space.distance(other.state(j), x_new) <= config.step_size and \
                    _edge_free(scenario, x_new, other.state(j), config, counters):
                joins.append((idx, j) if tree is fwd else (j, idx))
        if joins and not config.refine_to_budget:
            break

    result = PlanResult(success=bool(joins), planner=name, samples_generated=counters.inserted,
                        collision_checks=counters.checks, config=config.model_dump(mode='json'),
                        trees=[fwd, bwd])
    if joins:
        best_path, best_cost = None, math.inf
        for i, j in joins:
            path = fwd.branch(i)
            if j is not None:
                path = path + list(reversed(bwd.branch(j)))
            cost = space.path_cost(path)
            if cost < best_cost:
                best_path, best_cost = path, cost
        result.path = best_path
        result.path_length = best_cost
    result.wall_time = time.perf_counter() - started
    return result
