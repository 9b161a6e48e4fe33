"""Small scenario and model factories shared by the test modules."""
import numpy as np

from services.config import EstimatorConfig, SamplerConfig
from services.environment import AgentGeometry, Obstacle, Scenario, Workspace, make_space
from services.estimator import EstimatorModel
from services.sampler_model import SamplerModel


def point_scenario(start=(0.0, 0.0), goal=(5.0, 0.0), bounds=((-1.0, 6.0), (-1.0, 1.0)),
                   obstacles=(), goal_radius=1.0, seed=0, scenario_id=0):
    workspace = Workspace(np.asarray(bounds, dtype=float),
                          tuple(Obstacle(np.asarray(c, dtype=float), np.asarray(h, dtype=float))
                                for c, h in obstacles))
    space = make_space('point2d', workspace)
    return Scenario(workspace, space, AgentGeometry.for_space('point2d'), np.asarray(start, dtype=float),
                    np.asarray(goal, dtype=float), goal_radius, seed=seed, scenario_id=scenario_id)


def open_field(seed=0, scenario_id=0):
    """20x20 field with one small box off the straight line."""
    return point_scenario(start=(2.0, 2.0), goal=(16.0, 16.0), bounds=((0.0, 20.0), (0.0, 20.0)),
                          obstacles=[((15.0, 4.0), (1.0, 1.0))], seed=seed, scenario_id=scenario_id)


def tiny_sampler(state_dim=2, point_dim=2, seed=0, **overrides) -> SamplerModel:
    values = dict(state_dim=state_dim, point_dim=point_dim, d_model=4, latent_len=2, n_heads=1,
                  encoder_self_layers=1, decoder_self_layers=1, mlp_ratio=1)
    values.update(overrides)
    return SamplerModel.create(SamplerConfig(**values), seed=seed)


def tiny_estimator(state_dim=2, point_dim=2, seed=0, **overrides) -> EstimatorModel:
    values = dict(state_dim=state_dim, point_dim=point_dim, d_model=4, latent_len=2, n_heads=1,
                  encoder_self_layers=0, mlp_ratio=1, length_scale=1.0)
    values.update(overrides)
    return EstimatorModel.create(EstimatorConfig(**values), seed=seed)


def scramble(model, seed=1, scale=0.5):
    """Replace every parameter by N(0, scale) draws so no gradient is vanishingly small."""
    rng = np.random.default_rng(seed)
    for p in model.params.values():
        p.data = rng.normal(0.0, scale, size=p.data.shape)
    return model


def zero_heads(model: SamplerModel) -> SamplerModel:
    for name in ('head.mu.w', 'head.mu.b', 'head.sigma.w', 'head.sigma.b'):
        model.params[name].data = np.zeros_like(model.params[name].data)
    return model
