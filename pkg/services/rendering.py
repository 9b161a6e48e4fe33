"""Static SVG renders of scenarios, search trees and paths.

Every tree edge is its own SVG element with id ``edge-<tree>-<node>`` and the
solution path is a single polyline with id ``path``. 3D scenarios render as
three axis projections side by side. Output is byte-stable for identical
inputs (fixed hash salt, no date metadata).
"""
import io
import logging
from typing import Any, Dict, List, Optional

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Polygon, Rectangle  # noqa: E402

from services.environment import (AgentKind, Scenario, scenario_point_cloud,  # noqa: E402
                                  snake_forward_kinematics)

logger = logging.getLogger(__name__)

HASH_SALT = 'silrrt'
TREE_COLORS = ('#4c72b0', '#dd8452')
PROJECTIONS = ((0, 1), (0, 2), (1, 2))


class UnsupportedRenderError(ValueError):
    """Scenario or result whose dimensions cannot be drawn."""


def check_renderable(scenario_data: Dict[str, Any]) -> None:
    dims = len(scenario_data.get('bounds', []))
    if dims not in (2, 3):
        raise UnsupportedRenderError(f'Cannot render a {dims}D workspace; only 2D and 3D are supported')


def _rect_corners(center, heading, half_w, half_h) -> np.ndarray:
    c, s = np.cos(heading), np.sin(heading)
    local = np.array([[half_w, half_h], [-half_w, half_h], [-half_w, -half_h], [half_w, -half_h]])
    return np.asarray(center[:2]) + local @ np.array([[c, s], [-s, c]])


def _draw_agent(ax, scenario: Scenario, state, color: str, gid: str) -> None:
    agent = scenario.agent
    if agent.kind is AgentKind.RECTANGLE:
        ax.add_patch(Polygon(_rect_corners(state, state[2], agent.half_w, agent.half_h), closed=True,
                             fill=False, edgecolor=color, linewidth=1.2, gid=gid))
    elif agent.kind is AgentKind.SNAKE_LINKS:
        segments = snake_forward_kinematics(state, agent)
        points = np.vstack([segments[:, 0], segments[-1:, 1]])
        ax.plot(points[:, 0], points[:, 1], color=color, linewidth=2.0, gid=gid)


def _draw_panel(ax, scenario: Scenario, cloud: np.ndarray, result: Optional[Dict[str, Any]], axes) -> None:
    i, j = axes
    bounds = scenario.workspace.bounds
    for k, obs in enumerate(scenario.workspace.obstacles):
        ax.add_patch(Rectangle((obs.lo[i], obs.lo[j]), 2 * obs.half_extents[i], 2 * obs.half_extents[j],
                               facecolor='#9e9e9e', edgecolor='#424242', linewidth=0.6, gid=f'obstacle-{k}'))
    if cloud.size:
        ax.scatter(cloud[:, i], cloud[:, j], s=1.5, c='#212121', linewidths=0, gid='cloud')
    if result:
        for t, tree in enumerate(result.get('trees') or []):
            states = np.asarray(tree['states'], dtype=float)
            for node, parent in enumerate(tree['parents']):
                if parent < 0:
                    continue
                ax.plot([states[parent, i], states[node, i]], [states[parent, j], states[node, j]],
                        color=TREE_COLORS[t % len(TREE_COLORS)], linewidth=0.5, gid=f'edge-{t}-{node}')
        if result.get('path'):
            path = np.asarray(result['path'], dtype=float)
            ax.plot(path[:, i], path[:, j], color='#c62828', linewidth=2.0, gid='path')
    ax.plot([scenario.start[i]], [scenario.start[j]], marker='o', color='#2e7d32', gid='start')
    ax.plot([scenario.goal[i]], [scenario.goal[j]], marker='*', color='#c62828', markersize=10, gid='goal')
    ax.add_patch(plt.Circle((scenario.goal[i], scenario.goal[j]), scenario.goal_radius, fill=False,
                            linestyle='--', edgecolor='#c62828', gid='goal-region'))
    if scenario.workspace.dim == 2:
        _draw_agent(ax, scenario, scenario.start, '#2e7d32', 'start-footprint')
        _draw_agent(ax, scenario, scenario.goal, '#c62828', 'goal-footprint')
    ax.set_xlim(bounds[i])
    ax.set_ylim(bounds[j])
    ax.set_aspect('equal')
    ax.set_xticks([])
    ax.set_yticks([])


def render_svg(scenario: Scenario, result: Optional[Dict[str, Any]] = None,
               point_cloud_size: int = 1000) -> str:
    """SVG document for a scenario and, optionally, a serialized PlanResult."""
    dim = scenario.workspace.dim
    if dim not in (2, 3):
        raise UnsupportedRenderError(f'Cannot render a {dim}D workspace')
    if result and result.get('path'):
        width = np.asarray(result['path']).shape[-1]
        if width != scenario.space.dim:
            raise UnsupportedRenderError(f'Result states have {width} coordinates, scenario expects '
                                         f'{scenario.space.dim}')
    cloud = scenario_point_cloud(scenario, point_cloud_size)
    lo, hi = scenario.workspace.bounds[:, 0], scenario.workspace.bounds[:, 1]
    cloud = cloud[np.all((cloud >= lo) & (cloud <= hi), axis=1)]

    panels: List = [(0, 1)] if dim == 2 else list(PROJECTIONS)
    with plt.rc_context({'svg.hashsalt': HASH_SALT, 'svg.fonttype': 'none'}):
        fig, axes = plt.subplots(1, len(panels), figsize=(6 * len(panels), 6), squeeze=False)
        for ax, proj in zip(axes[0], panels):
            _draw_panel(ax, scenario, cloud, result, proj)
        title = f'scenario {scenario.scenario_id}'
        if result:
            title += f" - {result.get('planner', '')} {'success' if result.get('success') else 'failure'}"
        fig.suptitle(title)
        buf = io.StringIO()
        fig.savefig(buf, format='svg', metadata={'Date': None})
        plt.close(fig)
    return buf.getvalue()
