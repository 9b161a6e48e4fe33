"""Workspaces, scenarios, collision checking and obstacle point clouds.

Obstacles are axis-aligned boxes. Agents are a point mass, an oriented
rectangle (SE(2) rigid body) or a three-link snake; every agent footprint is
reduced to oriented rectangles and tested against the boxes with a separating
axis test.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.config import DEFAULT_GOAL_RADIUS, DEFAULT_POINT_CLOUD_SIZE, EnvironmentConfig
from services.geometry import StateSpace, StateSpaceKind

logger = logging.getLogger(__name__)

MAX_SCENARIO_ATTEMPTS = 10_000
SURFACE_TOL = 1e-9


class GenerationError(RuntimeError):
    """Raised when a workspace or scenario cannot be generated."""


@dataclass(frozen=True, eq=False)
class Obstacle:
    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float)
        half = np.asarray(self.half_extents, dtype=float)
        if center.shape != half.shape or center.ndim != 1:
            raise ValueError(f'Obstacle center {center.shape} and half extents {half.shape} disagree')
        if np.any(half <= 0):
            raise ValueError(f'Obstacle half extents must be positive, got {half.tolist()}')
        object.__setattr__(self, 'center', center)
        object.__setattr__(self, 'half_extents', half)

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.half_extents

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.half_extents

    def surface_measure(self) -> float:
        """Perimeter in 2D, surface area in 3D."""
        size = 2.0 * self.half_extents
        if size.shape[0] == 2:
            return float(2.0 * (size[0] + size[1]))
        return float(2.0 * (size[0] * size[1] + size[1] * size[2] + size[0] * size[2]))

    def to_dict(self) -> Dict[str, Any]:
        return {'center': self.center.tolist(), 'half_extents': self.half_extents.tolist()}


@dataclass(frozen=True, eq=False)
class Workspace:
    bounds: np.ndarray
    obstacles: Tuple[Obstacle, ...] = ()

    def __post_init__(self):
        bounds = np.asarray(self.bounds, dtype=float)
        if bounds.ndim != 2 or bounds.shape[1] != 2 or bounds.shape[0] not in (2, 3):
            raise ValueError(f'Workspace bounds must be (2|3, 2), got {bounds.shape}')
        object.__setattr__(self, 'bounds', bounds)
        object.__setattr__(self, 'obstacles', tuple(self.obstacles))
        for obs in self.obstacles:
            if obs.center.shape[0] != self.dim:
                raise ValueError('Obstacle dimension does not match workspace')
            if np.any(obs.lo < bounds[:, 0] - SURFACE_TOL) or np.any(obs.hi > bounds[:, 1] + SURFACE_TOL):
                raise ValueError(f'Obstacle {obs.to_dict()} sticks out of the workspace')
        if self.obstacles:
            lo = np.array([o.lo for o in self.obstacles])
            hi = np.array([o.hi for o in self.obstacles])
        else:
            lo = np.zeros((0, self.dim))
            hi = np.zeros((0, self.dim))
        object.__setattr__(self, '_box_lo', lo)
        object.__setattr__(self, '_box_hi', hi)

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bounds[:, 1] - self.bounds[:, 0]))

    @property
    def box_lo(self) -> np.ndarray:
        return self._box_lo

    @property
    def box_hi(self) -> np.ndarray:
        return self._box_hi

    def to_dict(self) -> Dict[str, Any]:
        return {'bounds': self.bounds.tolist(), 'obstacles': [o.to_dict() for o in self.obstacles]}


class AgentKind(str, Enum):
    POINT_MASS = 'point_mass'
    RECTANGLE = 'rectangle'
    SNAKE_LINKS = 'snake_links'


_AGENT_FOR_SPACE = {
    StateSpaceKind.POINT2D: AgentKind.POINT_MASS,
    StateSpaceKind.POINT3D: AgentKind.POINT_MASS,
    StateSpaceKind.RIGID2D: AgentKind.RECTANGLE,
    StateSpaceKind.SNAKE: AgentKind.SNAKE_LINKS,
}


@dataclass(frozen=True)
class AgentGeometry:
    kind: AgentKind
    half_w: float = 1.0
    half_h: float = 0.5
    link_length: float = 1.5
    half_width: float = 0.2
    n_links: int = 3

    def __post_init__(self):
        object.__setattr__(self, 'kind', AgentKind(self.kind))
        if min(self.half_w, self.half_h, self.link_length, self.half_width) <= 0:
            raise ValueError(f'Agent dimensions must be positive: {self}')

    @classmethod
    def for_space(cls, kind, config: Optional[EnvironmentConfig] = None) -> 'AgentGeometry':
        config = config or EnvironmentConfig()
        agent_kind = _AGENT_FOR_SPACE[StateSpaceKind(kind)]
        return cls(agent_kind, half_w=config.rigid_half_w, half_h=config.rigid_half_h,
                   link_length=config.snake_link_length, half_width=config.snake_half_width)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {'kind': self.kind.value}
        if self.kind is AgentKind.RECTANGLE:
            data.update(half_w=self.half_w, half_h=self.half_h)
        elif self.kind is AgentKind.SNAKE_LINKS:
            data.update(link_length=self.link_length, half_width=self.half_width)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AgentGeometry':
        return cls(**data)


@dataclass(frozen=True, eq=False)
class Scenario:
    workspace: Workspace
    space: StateSpace
    agent: AgentGeometry
    start: np.ndarray
    goal: np.ndarray
    goal_radius: float = DEFAULT_GOAL_RADIUS
    seed: Optional[int] = None
    scenario_id: Optional[int] = None
    collision_step: float = 0.1

    def __post_init__(self):
        if _AGENT_FOR_SPACE[self.space.kind] is not self.agent.kind:
            raise ValueError(f'{self.agent.kind.value} agent cannot move in a {self.space.kind.value} space')
        if self.space.ambient_dim != self.workspace.dim:
            raise ValueError('State space and workspace dimensions disagree')
        if self.goal_radius <= 0:
            raise ValueError(f'goal_radius must be positive, got {self.goal_radius}')
        start = self.space.validate(self.start).copy()
        goal = self.space.validate(self.goal).copy()
        start.setflags(write=False)
        goal.setflags(write=False)
        object.__setattr__(self, 'start', start)
        object.__setattr__(self, 'goal', goal)
        if self.space.distance(start, goal) <= self.goal_radius:
            raise ValueError('Start already lies inside the goal region')
        if state_in_collision(self, start) or state_in_collision(self, goal):
            raise ValueError('Start and goal must be collision-free')

    def in_goal_region(self, state) -> bool:
        return self.space.distance(state, self.goal) <= self.goal_radius


# ----------------------------------------------------------------------
# Generation
# ----------------------------------------------------------------------

def default_bounds(dim: int, extent: float = 40.0) -> np.ndarray:
    return np.tile(np.array([0.0, extent]), (dim, 1))


def generate_workspace(rng: np.random.Generator, ambient_dim: int, n_obstacles: int,
                       size_range: Sequence[float], bounds: Optional[np.ndarray] = None) -> Workspace:
    """Uniformly placed boxes with half extents uniform in ``size_range``."""
    if ambient_dim not in (2, 3):
        raise ValueError(f'Workspaces are 2D or 3D, got {ambient_dim}')
    if n_obstacles < 0:
        raise ValueError(f'n_obstacles must be >= 0, got {n_obstacles}')
    bounds = default_bounds(ambient_dim) if bounds is None else np.asarray(bounds, dtype=float)
    lo_size, hi_size = size_range
    extent = bounds[:, 1] - bounds[:, 0]
    if np.any(2.0 * hi_size > extent):
        raise GenerationError(f'Obstacles up to half extent {hi_size} cannot fit in bounds {bounds.tolist()}')
    obstacles = []
    for _ in range(n_obstacles):
        half = rng.uniform(lo_size, hi_size, size=ambient_dim)
        center = rng.uniform(bounds[:, 0] + half, bounds[:, 1] - half)
        obstacles.append(Obstacle(center, half))
    return Workspace(bounds, tuple(obstacles))


def generate_scenario(rng: np.random.Generator, workspace: Workspace, space: StateSpace,
                      agent: AgentGeometry, goal_radius: float = DEFAULT_GOAL_RADIUS,
                      collision_step: float = 0.1, seed: Optional[int] = None,
                      scenario_id: Optional[int] = None) -> Scenario:
    """Rejection-sample a collision-free start/goal pair that is far enough apart."""
    min_separation = max(goal_radius, 0.25 * workspace.diagonal)
    start = None
    for _ in range(MAX_SCENARIO_ATTEMPTS):
        candidate = space.sample_uniform(rng)
        if footprint_in_collision(workspace, agent, candidate[None, :])[0]:
            continue
        if start is None:
            start = candidate
            continue
        if space.distance(start, candidate) > min_separation:
            return Scenario(workspace, space, agent, start, candidate, goal_radius,
                            seed=seed, scenario_id=scenario_id, collision_step=collision_step)
    raise GenerationError(f'No valid start/goal pair after {MAX_SCENARIO_ATTEMPTS} attempts; '
                          f'workspace with {len(workspace.obstacles)} obstacles is too dense')


def make_space(kind, workspace: Workspace, angular_weight: float = 1.0) -> StateSpace:
    return StateSpace.make(kind, workspace.bounds, angular_weight)


# ----------------------------------------------------------------------
# Point clouds
# ----------------------------------------------------------------------

def sample_surface_point_cloud(workspace: Workspace, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points drawn uniformly from the union of obstacle boundaries."""
    if n < 1:
        raise ValueError(f'Point cloud size must be >= 1, got {n}')
    dim = workspace.dim
    if not workspace.obstacles:
        far = workspace.bounds[:, 1] + 10.0 * (workspace.bounds[:, 1] - workspace.bounds[:, 0])
        return np.tile(far, (n, 1))
    measures = np.array([o.surface_measure() for o in workspace.obstacles])
    picks = rng.choice(len(measures), size=n, p=measures / measures.sum())
    centers = np.array([o.center for o in workspace.obstacles])[picks]
    halves = np.array([o.half_extents for o in workspace.obstacles])[picks]
    # uniform inside the box, then project one coordinate onto a face
    unit = rng.uniform(-1.0, 1.0, size=(n, dim))
    if dim == 2:
        face_w = np.stack([halves[:, 1], halves[:, 0]], axis=1)     # face normal to axis k spans the other axis
    else:
        face_w = np.stack([halves[:, 1] * halves[:, 2],
                           halves[:, 0] * halves[:, 2],
                           halves[:, 0] * halves[:, 1]], axis=1)
    axis_p = face_w / face_w.sum(axis=1, keepdims=True)
    cum = np.cumsum(axis_p, axis=1)
    axis = (rng.uniform(size=(n, 1)) > cum).sum(axis=1)
    axis = np.minimum(axis, dim - 1)
    side = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
    unit[np.arange(n), axis] = side
    return centers + unit * halves


def normalize_points(workspace: Workspace, points: np.ndarray) -> np.ndarray:
    lo = workspace.bounds[:, 0]
    hi = workspace.bounds[:, 1]
    return 2.0 * (points - lo) / (hi - lo) - 1.0


def distance_to_surface(workspace: Workspace, point: np.ndarray) -> float:
    """Unsigned distance from a point to the nearest obstacle boundary."""
    best = math.inf
    for obs in workspace.obstacles:
        q = np.abs(point - obs.center) - obs.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0))
        inside = min(float(np.max(q)), 0.0)
        best = min(best, abs(outside + inside))
    return best


# ----------------------------------------------------------------------
# Collision checking
# ----------------------------------------------------------------------

def snake_forward_kinematics(state, agent: AgentGeometry) -> np.ndarray:
    """Link segments (n_links, 2, 2): start and end point of every link."""
    state = np.asarray(state, dtype=float)
    segments = np.empty((agent.n_links, 2, 2))
    point = state[:2].copy()
    heading = state[2]
    joints = state[3:]
    for i in range(agent.n_links):
        if i > 0:
            heading = heading + joints[i - 1]
        end = point + agent.link_length * np.array([math.cos(heading), math.sin(heading)])
        segments[i, 0] = point
        segments[i, 1] = end
        point = end
    return segments


def _snake_rectangles(states: np.ndarray, agent: AgentGeometry) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """Centers (m*links, 2) and headings of every link rectangle."""
    m = states.shape[0]
    headings = np.empty((m, agent.n_links))
    headings[:, 0] = states[:, 2]
    for i in range(1, agent.n_links):
        headings[:, i] = headings[:, i - 1] + states[:, 2 + i]
    direction = np.stack([np.cos(headings), np.sin(headings)], axis=-1) * agent.link_length
    starts = states[:, None, :2] + np.concatenate(
        [np.zeros((m, 1, 2)), np.cumsum(direction, axis=1)[:, :-1]], axis=1)
    centers = starts + 0.5 * direction
    return (centers.reshape(-1, 2), headings.reshape(-1),
            0.5 * agent.link_length, agent.half_width)


def _rects_hit_boxes(centers: np.ndarray, headings: np.ndarray, half_w: float, half_h: float,
                     box_lo: np.ndarray, box_hi: np.ndarray) -> np.ndarray:
    """Separating-axis test of oriented rectangles against AABBs; touching counts."""
    if box_lo.shape[0] == 0:
        return np.zeros(centers.shape[0], dtype=bool)
    c = np.abs(np.cos(headings))[:, None]
    s = np.abs(np.sin(headings))[:, None]
    box_c = 0.5 * (box_lo + box_hi)[None, :, :]
    box_h = 0.5 * (box_hi - box_lo)[None, :, :]
    delta = box_c - centers[:, None, :]
    # world axes
    ext_x = c * half_w + s * half_h
    ext_y = s * half_w + c * half_h
    hit = np.abs(delta[..., 0]) <= box_h[..., 0] + ext_x
    hit &= np.abs(delta[..., 1]) <= box_h[..., 1] + ext_y
    # rectangle axes
    cos_t = np.cos(headings)[:, None]
    sin_t = np.sin(headings)[:, None]
    along_u = delta[..., 0] * cos_t + delta[..., 1] * sin_t
    along_v = -delta[..., 0] * sin_t + delta[..., 1] * cos_t
    hit &= np.abs(along_u) <= half_w + box_h[..., 0] * c + box_h[..., 1] * s
    hit &= np.abs(along_v) <= half_h + box_h[..., 0] * s + box_h[..., 1] * c
    return hit.any(axis=1)


def _rects_out_of_bounds(centers: np.ndarray, headings: np.ndarray, half_w: float, half_h: float,
                         bounds: np.ndarray) -> np.ndarray:
    c = np.abs(np.cos(headings))
    s = np.abs(np.sin(headings))
    ext = np.stack([c * half_w + s * half_h, s * half_w + c * half_h], axis=1)
    return np.any(centers - ext < bounds[:, 0] - SURFACE_TOL, axis=1) | \
        np.any(centers + ext > bounds[:, 1] + SURFACE_TOL, axis=1)


def footprint_in_collision(ws: Workspace, agent: AgentGeometry, states: np.ndarray) -> np.ndarray:
    """Vectorized collision flags for a batch of states; out of bounds collides."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if agent.kind is AgentKind.POINT_MASS:
        out = np.any(states < ws.bounds[:, 0], axis=1) | np.any(states > ws.bounds[:, 1], axis=1)
        if ws.box_lo.shape[0]:
            inside = (states[:, None, :] >= ws.box_lo[None]) & (states[:, None, :] <= ws.box_hi[None])
            out |= inside.all(axis=2).any(axis=1)
        return out
    if agent.kind is AgentKind.RECTANGLE:
        centers, headings = states[:, :2], states[:, 2]
        half_w, half_h = agent.half_w, agent.half_h
        per_state = 1
    else:
        centers, headings, half_w, half_h = _snake_rectangles(states, agent)
        per_state = agent.n_links
    hit = _rects_hit_boxes(centers, headings, half_w, half_h, ws.box_lo, ws.box_hi)
    hit |= _rects_out_of_bounds(centers, headings, half_w, half_h, ws.bounds)
    return hit.reshape(-1, per_state).any(axis=1)


def states_in_collision(scenario: Scenario, states: np.ndarray) -> np.ndarray:
    return footprint_in_collision(scenario.workspace, scenario.agent, states)


def state_in_collision(scenario: Scenario, state) -> bool:
    return bool(states_in_collision(scenario, np.asarray(state, dtype=float)[None, :])[0])


def edge_in_collision(scenario: Scenario, a, b, collision_step: Optional[float] = None) -> bool:
    """Check interpolated states every ``collision_step`` along the metric, endpoints included."""
    step = collision_step or scenario.collision_step
    dist = scenario.space.distance(a, b)
    n = max(int(math.ceil(dist / step)), 1) + 1
    ts = np.linspace(0.0, 1.0, n)
    return bool(states_in_collision(scenario, scenario.space.interpolate_many(a, b, ts)).any())


def path_is_valid(scenario: Scenario, path: List[np.ndarray]) -> bool:
    """Starts at start, ends in the goal region, every edge collision-free."""
    if len(path) < 2:
        return False
    if scenario.space.distance(path[0], scenario.start) > 1e-9 or not scenario.in_goal_region(path[-1]):
        return False
    return not any(edge_in_collision(scenario, a, b) for a, b in zip(path[:-1], path[1:]))


# ----------------------------------------------------------------------
# Scenario file format
# ----------------------------------------------------------------------

def scenario_to_dict(scenario: Scenario) -> Dict[str, Any]:
    data = {
        'space': scenario.space.kind.value,
        'bounds': scenario.workspace.bounds.tolist(),
        'obstacles': [o.to_dict() for o in scenario.workspace.obstacles],
        'agent': scenario.agent.to_dict(),
        'start': scenario.start.tolist(),
        'goal': scenario.goal.tolist(),
        'goal_radius': scenario.goal_radius,
        'seed': scenario.seed,
    }
    if scenario.scenario_id is not None:
        data['scenario_id'] = scenario.scenario_id
    data['angular_weight'] = scenario.space.angular_weight
    data['collision_step'] = scenario.collision_step
    return data


def scenario_from_dict(data: Dict[str, Any]) -> Scenario:
    workspace = Workspace(
        np.asarray(data['bounds'], dtype=float),
        tuple(Obstacle(o['center'], o['half_extents']) for o in data['obstacles']),
    )
    space = make_space(data['space'], workspace, float(data.get('angular_weight', 1.0)))
    return Scenario(
        workspace, space, AgentGeometry.from_dict(data['agent']),
        np.asarray(data['start'], dtype=float), np.asarray(data['goal'], dtype=float),
        float(data.get('goal_radius', DEFAULT_GOAL_RADIUS)),
        seed=data.get('seed'), scenario_id=data.get('scenario_id'),
        collision_step=float(data.get('collision_step', 0.1)),
    )


def scenario_point_cloud(scenario: Scenario, n: int = DEFAULT_POINT_CLOUD_SIZE) -> np.ndarray:
    """Obstacle-surface cloud of a scenario, reproducible from its seed."""
    seed = 0 if scenario.seed is None else int(scenario.seed)
    return sample_surface_point_cloud(scenario.workspace, n, np.random.default_rng([seed, n]))
