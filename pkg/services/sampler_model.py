"""Learned sampler: point-cloud encoder, causal node decoder, Gaussian head.

All states handed to the model are in normalized coordinates (see
``StateSpace.normalize_for_model``). A decoder step sees the goal token
followed by the last ``context_window`` tree nodes; teacher-forced training
packs every step of a path into one sequence with a block-diagonal causal
mask so a whole path costs one forward pass.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from services.autodiff import (Tensor, add, concat, gaussian_entropy, gaussian_log_prob, mul,
                               neg, parameter, softplus, take)
from services.blocks import (NetworkModel, Params, attention_block, encode_points, init_attention_block,
                             init_linear, init_norm, init_point_encoder, linear, norm)
from services.config import SamplerConfig
from services.environment import Scenario, normalize_points
from services.geometry import StateSpace

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-4


@dataclass
class GaussianStep:
    """Diagonal Gaussian over the next state, in normalized coordinates."""
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class TrainingExample:
    points: np.ndarray   # normalized point cloud (n, point_dim)
    goal: np.ndarray     # normalized goal state (d,)
    path: np.ndarray     # normalized path states (N, d), N >= 2

    @property
    def n_steps(self) -> int:
        return self.path.shape[0] - 1


def causal_block_mask(block_sizes: Sequence[int]) -> np.ndarray:
    """Keep-mask letting each token see itself and earlier tokens of its own block."""
    total = int(sum(block_sizes))
    keep = np.zeros((total, total), dtype=bool)
    start = 0
    for size in block_sizes:
        keep[start:start + size, start:start + size] = np.tril(np.ones((size, size), dtype=bool))
        start += size
    return keep


class SamplerModel(NetworkModel):
    model_kind = 'sampler'
    config_class = SamplerConfig

    @classmethod
    def build_params(cls, config: SamplerConfig, rng: np.random.Generator) -> Params:
        d, dm = config.state_dim, config.d_model
        params: Params = {}
        init_point_encoder(rng, params, 'enc', config.point_dim, dm, config.latent_len,
                           config.encoder_self_layers, config.mlp_ratio)
        init_linear(rng, params, 'dec.node_embed', d, dm)
        init_linear(rng, params, 'dec.goal_embed', d, dm)
        params['dec.goal_type'] = parameter(rng.normal(0.0, 0.1, size=(1, dm)), 'dec.goal_type')
        params['dec.pos'] = parameter(rng.normal(0.0, 0.1, size=(config.context_window, dm)), 'dec.pos')
        for i in range(config.decoder_self_layers):
            init_attention_block(rng, params, f'dec.self{i}', dm, config.mlp_ratio)
        init_attention_block(rng, params, 'dec.cross', dm, config.mlp_ratio, cross=True)
        init_norm(params, 'dec.ln_out', dm)
        init_linear(rng, params, 'head.mu', dm, d, scale=0.1)
        init_linear(rng, params, 'head.sigma', dm, d, scale=0.1)
        return params

    # ------------------------------------------------------------------
    # Forward
    # ------------------------------------------------------------------

    def encode_state_space(self, points: np.ndarray) -> Tensor:
        """Latent array Z_p of shape (latent_len, d_model)."""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.config.point_dim:
            raise ValueError(f'Point cloud must be (n, {self.config.point_dim}), got {points.shape}')
        return encode_points(self.params, 'enc', points, self.config.n_heads, self.config.encoder_self_layers)

    def _windows(self, n_nodes: int, prefix_lengths: Sequence[int]) -> Tuple[List[int], List[int], List[int]]:
        """Token gather indices for each prefix: goal row 0, node j at row j + 1."""
        W = self.config.context_window
        base_idx: List[int] = []
        pos_idx: List[int] = []
        sizes: List[int] = []
        for length in prefix_lengths:
            if not 1 <= length <= n_nodes:
                raise ValueError(f'Prefix length {length} outside 1..{n_nodes}')
            lo = max(0, length - W)
            k = length - lo
            base_idx.append(0)
            pos_idx.append(0)
            base_idx.extend(j + 1 for j in range(lo, length))
            # newest node always sits at the last position slot
            pos_idx.extend(W - k + i + 1 for i in range(k))
            sizes.append(k + 1)
        return base_idx, pos_idx, sizes

    def decode_steps(self, Z: Tensor, goal: np.ndarray, nodes: np.ndarray,
                     prefix_lengths: Sequence[int]) -> Tuple[Tensor, Tensor]:
        """(mu, sigma) matrices with one row per prefix length of ``nodes``."""
        cfg = self.config
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        goal = np.asarray(goal, dtype=float).reshape(1, -1)
        if nodes.shape[0] == 0:
            raise ValueError('Decoder needs at least one node (the tree root)')
        if nodes.shape[1] != cfg.state_dim or goal.shape[1] != cfg.state_dim:
            raise ValueError(f'Decoder expects {cfg.state_dim}-dimensional states, '
                             f'got nodes {nodes.shape} and goal {goal.shape}')
        p = self.params
        goal_tok = add(linear(p, 'dec.goal_embed', Tensor(goal)), p['dec.goal_type'])
        base = concat([goal_tok, linear(p, 'dec.node_embed', Tensor(nodes))], axis=0)
        pos_ext = concat([Tensor(np.zeros((1, cfg.d_model))), p['dec.pos']], axis=0)
        base_idx, pos_idx, sizes = self._windows(nodes.shape[0], prefix_lengths)
        x = add(take(base, rows=np.array(base_idx)), take(pos_ext, rows=np.array(pos_idx)))
        mask = causal_block_mask(sizes)
        for i in range(cfg.decoder_self_layers):
            x = attention_block(p, f'dec.self{i}', x, cfg.n_heads, mask=mask)
        x = attention_block(p, 'dec.cross', x, cfg.n_heads, context=Z)
        x = norm(p, 'dec.ln_out', x)
        last_rows = np.cumsum(sizes) - 1
        h = take(x, rows=last_rows)
        mu = linear(p, 'head.mu', h)
        if cfg.predict_deltas:
            mu = add(mu, Tensor(nodes[np.asarray(prefix_lengths) - 1]))
        sigma = add(softplus(linear(p, 'head.sigma', h)), SIGMA_FLOOR)
        return mu, sigma

    def decode_next(self, Z: Tensor, goal, node_seq) -> GaussianStep:
        nodes = np.atleast_2d(np.asarray(node_seq, dtype=float))
        if nodes.size == 0:
            raise ValueError('Decoder needs at least one node (the tree root)')
        window = nodes[-self.config.context_window:]
        mu, sigma = self.decode_steps(Z, goal, window, [window.shape[0]])
        return GaussianStep(mu.data[0].astype(float), sigma.data[0].astype(float))


# ----------------------------------------------------------------------
# Sampling
# ----------------------------------------------------------------------

def sample_next(step: GaussianStep, space: StateSpace, rng: np.random.Generator) -> np.ndarray:
    """Draw from the step distribution and map back into the state space."""
    z = rng.normal(step.mu, step.sigma)
    return space.enforce_bounds(space.denormalize_from_model(z))


# ----------------------------------------------------------------------
# Training data and losses
# ----------------------------------------------------------------------

def reverse_augment(path: Sequence[np.ndarray], rng: np.random.Generator,
                    prob: float = 0.5) -> Tuple[List[np.ndarray], bool]:
    """Reversed copy of ``path`` with probability ``prob``; also reports whether it flipped."""
    if rng.random() < prob:
        return [np.array(s, copy=True) for s in reversed(path)], True
    return [np.array(s, copy=True) for s in path], False


def build_example(scenario: Scenario, cloud: np.ndarray, path: Sequence[np.ndarray],
                  reversed_path: bool = False) -> TrainingExample:
    """Normalize one demonstration. A reversed path is heading for the original start."""
    if len(path) < 2:
        raise ValueError('A training path needs at least two states')
    space = scenario.space
    goal = np.asarray(path[-1] if reversed_path else scenario.goal, dtype=float)
    states = np.vstack([space.normalize_for_model(s) for s in path])
    return TrainingExample(points=normalize_points(scenario.workspace, cloud),
                           goal=space.normalize_for_model(goal), path=states)


def path_terms(model: SamplerModel, example: TrainingExample) -> Tuple[Tensor, Tensor]:
    """Per-step mean log-likelihood and per-step mean entropy of one path."""
    Z = model.encode_state_space(example.points)
    n = example.n_steps
    mu, sigma = model.decode_steps(Z, example.goal, example.path[:-1], list(range(1, n + 1)))
    loglik = mul(gaussian_log_prob(example.path[1:], mu, sigma), 1.0 / n)
    entropy = mul(gaussian_entropy(sigma), 1.0 / n)
    return loglik, entropy


def imitation_loss(model: SamplerModel, examples: Sequence[TrainingExample],
                   weights: Optional[Sequence[float]] = None, lambda_entropy: float = 0.0) -> Tensor:
    """-(1/B) sum_b [w_b * loglik_b + lambda * entropy_b].

    With ``weights`` None and ``lambda_entropy`` 0 this is the plain NLL.
    """
    if not examples:
        raise ValueError('Loss needs a non-empty batch')
    if weights is not None and len(weights) != len(examples):
        raise ValueError(f'{len(weights)} weights for {len(examples)} examples')
    total = None
    for b, example in enumerate(examples):
        loglik, entropy = path_terms(model, example)
        term = loglik if weights is None else mul(loglik, float(weights[b]))
        if lambda_entropy:
            term = add(term, mul(entropy, float(lambda_entropy)))
        total = term if total is None else add(total, term)
    return mul(neg(total), 1.0 / len(examples))


def nll_loss(model: SamplerModel, examples: Sequence[TrainingExample]) -> Tensor:
    return imitation_loss(model, examples)
