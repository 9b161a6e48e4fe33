"""Typed configuration for the workbench.

Defaults mirror the evaluation protocol (goal radius 1, 200 samples, 1000
cloud points, decoder window 5); anything the protocol leaves open is a
documented choice and can be overridden from JSON config files.
"""
import math
from typing import Any, Dict, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

DEFAULT_GOAL_RADIUS = 1.0
DEFAULT_MAX_SAMPLES = 200
DEFAULT_MAX_SAMPLES_UNIFORM_3D = 400
DEFAULT_POINT_CLOUD_SIZE = 1000
DEFAULT_CONTEXT_WINDOW = 5
SNAKE_JOINT_LIMIT = math.pi / 4
DEFAULT_TRIALS = 3


class _Config(BaseModel):
    model_config = ConfigDict(extra='forbid', frozen=True)


class EnvironmentConfig(_Config):
    """Workspace/scenario generation knobs."""
    extent: float = Field(40.0, gt=0)
    n_obstacles: int = Field(10, ge=0)
    size_range: Tuple[float, float] = (1.0, 4.0)
    goal_radius: float = Field(DEFAULT_GOAL_RADIUS, gt=0)
    point_cloud_size: int = Field(DEFAULT_POINT_CLOUD_SIZE, ge=1)
    angular_weight: float = Field(1.0, gt=0)
    collision_step: float = Field(0.1, gt=0)
    rigid_half_w: float = Field(1.0, gt=0)
    rigid_half_h: float = Field(0.5, gt=0)
    snake_link_length: float = Field(1.5, gt=0)
    snake_half_width: float = Field(0.2, gt=0)

    @model_validator(mode='after')
    def _check_sizes(self):
        lo, hi = self.size_range
        if not 0 < lo <= hi:
            raise ValueError(f'size_range must satisfy 0 < min <= max, got {self.size_range}')
        return self


class SamplerConfig(_Config):
    """Hyperparameters of the attention sampler."""
    state_dim: int = Field(2, ge=1)
    point_dim: int = Field(2, ge=2, le=3)
    d_model: int = Field(64, ge=1)
    latent_len: int = Field(32, ge=1)
    n_heads: int = Field(4, ge=1)
    encoder_self_layers: int = Field(2, ge=0)
    decoder_self_layers: int = Field(2, ge=0)
    context_window: int = Field(DEFAULT_CONTEXT_WINDOW, ge=1)
    mlp_ratio: int = Field(2, ge=1)
    predict_deltas: bool = False
    conditioning: Literal['branch', 'insertion'] = 'branch'

    @model_validator(mode='after')
    def _check_heads(self):
        if self.d_model % self.n_heads:
            raise ValueError(f'd_model={self.d_model} is not divisible by n_heads={self.n_heads}')
        return self


class EstimatorConfig(_Config):
    """Hyperparameters of the path-length estimator."""
    state_dim: int = Field(2, ge=1)
    point_dim: int = Field(2, ge=2, le=3)
    d_model: int = Field(64, ge=1)
    latent_len: int = Field(32, ge=1)
    n_heads: int = Field(4, ge=1)
    encoder_self_layers: int = Field(2, ge=0)
    mlp_ratio: int = Field(2, ge=1)
    # lengths are predicted in units of this scale (half the workspace diagonal)
    length_scale: float = Field(28.284271247461902, gt=0)
    architecture_version: int = 1

    @model_validator(mode='after')
    def _check_heads(self):
        if self.d_model % self.n_heads:
            raise ValueError(f'd_model={self.d_model} is not divisible by n_heads={self.n_heads}')
        return self


class PlannerConfig(_Config):
    """Search budget and RRT* constants."""
    max_samples: int = Field(DEFAULT_MAX_SAMPLES, ge=1)
    step_size: float = Field(2.0, gt=0)
    # None derives the constant from the state-space volume
    gamma_rewire: Optional[float] = Field(None, gt=0)
    goal_bias: float = Field(0.05, ge=0, le=1)
    collision_step: float = Field(0.1, gt=0)
    attempt_factor: int = Field(50, ge=1)
    learned_failure_limit: int = Field(20, ge=1)
    refine_to_budget: bool = False

    @property
    def max_attempts(self) -> int:
        return self.attempt_factor * self.max_samples


class TrainConfig(_Config):
    """Optimizer settings shared by pretraining and fine-tuning."""
    iters: int = Field(2000, ge=0)
    batch_size: int = Field(16, ge=1)
    lr: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps_adam: float = Field(1e-8, gt=0)
    optimizer: Literal['adam', 'sgd'] = 'adam'
    reverse_prob: float = Field(0.5, ge=0, le=1)
    dtype: Literal['float64', 'float32'] = 'float64'
    log_every: int = Field(50, ge=1)


class WsilConfig(_Config):
    """Weighted self-imitation fine-tuning schedule."""
    K0: float = Field(8.0, gt=0)
    anneal_divisor: float = Field(2.0, gt=1)
    anneal_every: int = Field(500, ge=1)
    K_floor: float = Field(1e-3, gt=0)
    lambda_entropy: float = Field(1e-3, ge=0)
    epsilon_start: float = Field(1.0, ge=0, le=1)
    epsilon_end: float = Field(0.1, ge=0, le=1)
    epsilon_decay_fraction: float = Field(0.5, gt=0, le=1)
    batch_size: int = Field(16, ge=1)
    total_iterations: int = Field(1000, ge=0)
    buffer_capacity: int = Field(2048, ge=1)
    exploration_planner: Literal['rrt', 'rrtstar'] = 'rrt'

    def epsilon(self, iteration: int) -> float:
        """Linear decay over the first part of the run, then constant."""
        horizon = self.epsilon_decay_fraction * max(self.total_iterations, 1)
        frac = min(iteration / horizon, 1.0)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac


def planner_config_for(space_kind: str, learned: bool, **overrides: Any) -> PlannerConfig:
    """Protocol budget: 200 samples, raised to 400 for uniform RRT* in 3D."""
    max_samples = DEFAULT_MAX_SAMPLES
    if space_kind == 'point3d' and not learned:
        max_samples = DEFAULT_MAX_SAMPLES_UNIFORM_3D
    overrides.setdefault('max_samples', max_samples)
    return PlannerConfig(**overrides)


PRESETS: Dict[str, Dict[str, Any]] = {
    'desk': {
        'workspaces': 20,
        'scenarios_per': 25,
        'obstacles': 5,
        'pretrain_iters': 2000,
        'finetune_iters': 1000,
        'trials': DEFAULT_TRIALS,
        'data_max_samples': 2000,
    },
    'full': {
        'workspaces': 100,
        'scenarios_per': 50,
        'obstacles': 10,
        'pretrain_iters': 5000,
        'finetune_iters': 5000,
        'trials': DEFAULT_TRIALS,
        'data_max_samples': 2000,
    },
}


def get_preset(name: Optional[str]) -> Dict[str, Any]:
    if name not in PRESETS:
        raise ValueError(f"Unknown preset '{name}', expected one of {sorted(PRESETS)}")
    return dict(PRESETS[name], name=name)
