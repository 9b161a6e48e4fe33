"""State spaces, metric, interpolation and steering.

States are plain ``numpy`` vectors; the ``StateSpace`` they belong to carries
bounds and the angular metric weight. Angles are radians in [-pi, pi).
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence

import numpy as np

from services.config import SNAKE_JOINT_LIMIT

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
BOUNDS_TOL = 1e-9


class StateSpaceKind(str, Enum):
    POINT2D = 'point2d'
    RIGID2D = 'rigid2d'
    POINT3D = 'point3d'
    SNAKE = 'snake'


class CoordKind(str, Enum):
    LINEAR = 'linear'
    ANGLE = 'angle'    # wraps around
    JOINT = 'joint'    # angular but bounded, never wraps


_LAYOUT = {
    StateSpaceKind.POINT2D: (CoordKind.LINEAR, CoordKind.LINEAR),
    StateSpaceKind.RIGID2D: (CoordKind.LINEAR, CoordKind.LINEAR, CoordKind.ANGLE),
    StateSpaceKind.POINT3D: (CoordKind.LINEAR, CoordKind.LINEAR, CoordKind.LINEAR),
    StateSpaceKind.SNAKE: (CoordKind.LINEAR, CoordKind.LINEAR, CoordKind.ANGLE,
                           CoordKind.JOINT, CoordKind.JOINT),
}

_AMBIENT_DIM = {
    StateSpaceKind.POINT2D: 2,
    StateSpaceKind.RIGID2D: 2,
    StateSpaceKind.POINT3D: 3,
    StateSpaceKind.SNAKE: 2,
}


def wrap_angle(x):
    """Map angles (scalar or array) into [-pi, pi)."""
    return np.mod(np.asarray(x, dtype=float) + math.pi, TWO_PI) - math.pi


@dataclass(frozen=True, eq=False)
class StateSpace:
    kind: StateSpaceKind
    bounds: np.ndarray            # (d, 2) rows of [lo, hi]
    angular_weight: float = 1.0

    def __post_init__(self):
        bounds = np.asarray(self.bounds, dtype=float)
        if bounds.shape != (len(_LAYOUT[self.kind]), 2):
            raise ValueError(f'{self.kind.value} expects bounds of shape '
                             f'({len(_LAYOUT[self.kind])}, 2), got {bounds.shape}')
        if np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ValueError(f'Every coordinate needs lo < hi, got {bounds.tolist()}')
        bounds.setflags(write=False)
        object.__setattr__(self, 'bounds', bounds)

    @classmethod
    def make(cls, kind, workspace_bounds, angular_weight: float = 1.0) -> 'StateSpace':
        """Build the state space that lives over an ambient workspace box."""
        kind = StateSpaceKind(kind)
        ws = np.asarray(workspace_bounds, dtype=float)
        if ws.shape != (_AMBIENT_DIM[kind], 2):
            raise ValueError(f'{kind.value} lives in a {_AMBIENT_DIM[kind]}D workspace, '
                             f'got bounds of shape {ws.shape}')
        rows = [ws[i] for i in range(ws.shape[0])]
        for coord in _LAYOUT[kind][ws.shape[0]:]:
            if coord is CoordKind.ANGLE:
                rows.append(np.array([-math.pi, math.pi]))
            else:
                rows.append(np.array([-SNAKE_JOINT_LIMIT, SNAKE_JOINT_LIMIT]))
        return cls(kind, np.vstack(rows), angular_weight)

    # ------------------------------------------------------------------
    # Layout
    # ------------------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    @property
    def ambient_dim(self) -> int:
        return _AMBIENT_DIM[self.kind]

    @property
    def coord_kinds(self) -> Sequence[CoordKind]:
        return _LAYOUT[self.kind]

    @property
    def angle_mask(self) -> np.ndarray:
        return np.array([c is CoordKind.ANGLE for c in self.coord_kinds])

    @property
    def angular_mask(self) -> np.ndarray:
        """Coordinates weighted by ``angular_weight`` in the metric."""
        return np.array([c is not CoordKind.LINEAR for c in self.coord_kinds])

    @property
    def lo(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def hi(self) -> np.ndarray:
        return self.bounds[:, 1]

    @property
    def measure(self) -> float:
        """Volume of the bounds box in metric units (angular extents scaled by ``angular_weight``)."""
        extent = self.hi - self.lo
        extent = np.where(self.angular_mask, extent * self.angular_weight, extent)
        return float(np.prod(extent))

    # ------------------------------------------------------------------
    # Validity
    # ------------------------------------------------------------------

    def check_dim(self, state) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        if state.shape[-1:] != (self.dim,):
            raise ValueError(f'{self.kind.value} states have {self.dim} coordinates, '
                             f'got shape {state.shape}')
        return state

    def contains(self, state) -> bool:
        state = self.check_dim(state)
        if not np.all(np.isfinite(state)):
            return False
        inside = (state >= self.lo - BOUNDS_TOL) & (state <= self.hi + BOUNDS_TOL)
        # angles live on the half-open interval
        inside &= ~self.angle_mask | (state < math.pi)
        return bool(np.all(inside))

    def validate(self, state) -> np.ndarray:
        state = self.check_dim(state)
        if not self.contains(state):
            raise ValueError(f'State {state.tolist()} lies outside {self.kind.value} bounds')
        return state

    def enforce_bounds(self, state) -> np.ndarray:
        """Wrap angles and clamp everything else (translation and joints)."""
        state = np.array(self.check_dim(state), dtype=float)
        out = np.clip(state, self.lo, self.hi)
        mask = self.angle_mask
        out[..., mask] = wrap_angle(state[..., mask])
        return out

    def sample_uniform(self, rng: np.random.Generator) -> np.ndarray:
        out = rng.uniform(self.lo, self.hi)
        out[self.angle_mask] = wrap_angle(out[self.angle_mask])
        return out

    # ------------------------------------------------------------------
    # Metric
    # ------------------------------------------------------------------

    def difference(self, a, b) -> np.ndarray:
        """b - a with shortest-arc differences on wrapping angles."""
        diff = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        mask = self.angle_mask
        if mask.any():
            diff[..., mask] = wrap_angle(diff[..., mask])
        return diff

    def distance(self, a, b) -> float:
        a = self.check_dim(a)
        b = self.check_dim(b)
        diff = self.difference(a, b)
        diff[self.angular_mask] *= self.angular_weight
        return float(np.sqrt(np.dot(diff, diff)))

    def distance_many(self, states: np.ndarray, b) -> np.ndarray:
        """Distances from every row of ``states`` to ``b``."""
        states = self.check_dim(states)
        diff = self.difference(states, np.broadcast_to(self.check_dim(b), states.shape))
        diff[:, self.angular_mask] *= self.angular_weight
        return np.sqrt(np.einsum('ij,ij->i', diff, diff))

    # ------------------------------------------------------------------
    # Interpolation & steering
    # ------------------------------------------------------------------

    def interpolate(self, a, b, t: float) -> np.ndarray:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f'Interpolation parameter must lie in [0, 1], got {t}')
        a = self.check_dim(a)
        b = self.check_dim(b)
        if t == 0.0:
            return a.copy()
        if t == 1.0:
            return b.copy()
        return self.interpolate_many(a, b, np.array([t]))[0]

    def interpolate_many(self, a, b, ts: np.ndarray) -> np.ndarray:
        """Rows interpolate(a, b, t) for every t in ``ts``; endpoints are exact."""
        a = self.check_dim(a)
        b = self.check_dim(b)
        ts = np.asarray(ts, dtype=float)
        out = a[None, :] + ts[:, None] * self.difference(a, b)[None, :]
        mask = self.angle_mask
        if mask.any():
            out[:, mask] = wrap_angle(out[:, mask])
        out[ts == 0.0] = a
        out[ts == 1.0] = b
        return out

    def steer(self, start, target, step: float) -> np.ndarray:
        if step <= 0:
            raise ValueError(f'Steering step must be positive, got {step}')
        start = self.check_dim(start)
        target = self.check_dim(target)
        dist = self.distance(start, target)
        if dist <= step:
            return target.copy()
        return self.enforce_bounds(self.interpolate(start, target, step / dist))

    # ------------------------------------------------------------------
    # Network coordinates
    # ------------------------------------------------------------------

    def normalize_for_model(self, state) -> np.ndarray:
        """Affine map of each coordinate onto [-1, 1]."""
        state = self.check_dim(state)
        inside = (state >= self.lo - BOUNDS_TOL) & (state <= self.hi + BOUNDS_TOL)
        if not np.all(inside):
            raise ValueError(f'Cannot normalize out-of-bounds state {np.asarray(state).tolist()}')
        return 2.0 * (state - self.lo) / (self.hi - self.lo) - 1.0

    def denormalize_from_model(self, vector) -> np.ndarray:
        vector = self.check_dim(vector)
        return self.lo + (vector + 1.0) * 0.5 * (self.hi - self.lo)

    def path_cost(self, path: Sequence[np.ndarray]) -> float:
        """Sum of metric distances over consecutive states."""
        path = np.asarray(path, dtype=float)
        if len(path) < 2:
            return 0.0
        diff = self.difference(path[:-1], path[1:])
        diff[:, self.angular_mask] *= self.angular_weight
        return float(np.sum(np.sqrt(np.einsum('ij,ij->i', diff, diff))))

    def to_dict(self) -> dict:
        return {'kind': self.kind.value, 'bounds': self.bounds.tolist(),
                'angular_weight': self.angular_weight}

    @classmethod
    def from_dict(cls, data: dict) -> 'StateSpace':
        return cls(StateSpaceKind(data['kind']), np.asarray(data['bounds'], dtype=float),
                   float(data.get('angular_weight', 1.0)))


def reverse_path(path: List[np.ndarray]) -> List[np.ndarray]:
    return [np.array(s, copy=True) for s in reversed(path)]
