"""Path-length estimator used to weight demonstrations during fine-tuning."""
import logging
from typing import Sequence, Tuple, Union

import numpy as np

from services.autodiff import Tensor, add, as_tensor, concat, mul, parameter, reduce_sum, relu, softplus, sub
from services.blocks import (NetworkModel, Params, attention_block, encode_points, init_attention_block,
                             init_linear, init_point_encoder, linear)
from services.config import EstimatorConfig

logger = logging.getLogger(__name__)


class EstimatorModel(NetworkModel):
    """Encoder over the point cloud plus a readout token that also sees start and goal."""

    model_kind = 'estimator'
    config_class = EstimatorConfig

    @classmethod
    def build_params(cls, config: EstimatorConfig, rng: np.random.Generator) -> Params:
        d, dm = config.state_dim, config.d_model
        params: Params = {}
        init_point_encoder(rng, params, 'enc', config.point_dim, dm, config.latent_len,
                           config.encoder_self_layers, config.mlp_ratio)
        init_linear(rng, params, 'est.start_embed', d, dm)
        init_linear(rng, params, 'est.goal_embed', d, dm)
        params['est.readout'] = parameter(rng.normal(0.0, 1.0, size=(1, dm)), 'est.readout')
        init_attention_block(rng, params, 'est.read', dm, config.mlp_ratio, cross=True)
        init_linear(rng, params, 'est.fc1', dm, dm)
        init_linear(rng, params, 'est.fc2', dm, 1, scale=0.1)
        return params

    def estimate_length(self, points: np.ndarray, start: np.ndarray, goal: np.ndarray) -> Tensor:
        """C_est as a 1x1 tensor in workspace units; inputs are normalized."""
        cfg = self.config
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != cfg.point_dim:
            raise ValueError(f'Point cloud must be (n, {cfg.point_dim}), got {points.shape}')
        p = self.params
        z = encode_points(p, 'enc', points, cfg.n_heads, cfg.encoder_self_layers)
        start_tok = linear(p, 'est.start_embed', Tensor(np.asarray(start, dtype=float).reshape(1, -1)))
        goal_tok = linear(p, 'est.goal_embed', Tensor(np.asarray(goal, dtype=float).reshape(1, -1)))
        context = concat([z, start_tok, goal_tok], axis=0)
        h = attention_block(p, 'est.read', p['est.readout'], cfg.n_heads, context=context)
        out = linear(p, 'est.fc2', relu(linear(p, 'est.fc1', h)))
        return mul(softplus(out), cfg.length_scale)

    def predict(self, points: np.ndarray, start: np.ndarray, goal: np.ndarray) -> float:
        return self.estimate_length(points, start, goal).item()


def estimator_loss(c_real: float, c_est: Union[Tensor, float]) -> Tensor:
    """0.5 * (C_real - C_est)^2."""
    diff = sub(as_tensor(c_est), float(c_real))
    return reduce_sum(mul(mul(diff, diff), 0.5))


def estimator_batch_loss(model: EstimatorModel,
                         batch: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray, float]]) -> Tensor:
    """Mean squared-error loss over (points, start, goal, C_real) tuples."""
    if not batch:
        raise ValueError('Loss needs a non-empty batch')
    total = None
    for points, start, goal, c_real in batch:
        term = estimator_loss(c_real, model.estimate_length(points, start, goal))
        total = term if total is None else add(total, term)
    return mul(total, 1.0 / len(batch))
