"""Attention building blocks shared by the sampler and the estimator.

Parameters live in flat ``{name: Tensor}`` dicts; every block is a pair of
``init_*`` (adds named parameters) and a forward function reading them back.
Blocks are pre-norm: ``x + Attn(LN(x), LN(ctx))`` then ``x + MLP(LN(x))``.
Query/key/value projections carry no bias (a key bias only shifts every
logit of a row by the same amount).
"""
import logging
import math
from pathlib import Path
from typing import Any, Dict, Optional, Type

import numpy as np
from pydantic import BaseModel, ValidationError

from services.autodiff import (Tensor, attention, add, concat, layer_norm,
                               matmul, parameter, relu, take)
from services.checkpoint import CheckpointError, Checkpoint, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

Params = Dict[str, Tensor]


def init_linear(rng: np.random.Generator, params: Params, prefix: str, n_in: int, n_out: int,
                bias: bool = True, scale: float = 1.0) -> None:
    params[f'{prefix}.w'] = parameter(rng.normal(0.0, scale / math.sqrt(n_in), size=(n_in, n_out)), f'{prefix}.w')
    if bias:
        params[f'{prefix}.b'] = parameter(np.zeros(n_out), f'{prefix}.b')


def linear(params: Params, prefix: str, x: Tensor) -> Tensor:
    y = matmul(x, params[f'{prefix}.w'])
    bias = params.get(f'{prefix}.b')
    return y if bias is None else add(y, bias)


def init_norm(params: Params, prefix: str, d: int) -> None:
    params[f'{prefix}.g'] = parameter(np.ones(d), f'{prefix}.g')
    params[f'{prefix}.b'] = parameter(np.zeros(d), f'{prefix}.b')


def norm(params: Params, prefix: str, x: Tensor) -> Tensor:
    return layer_norm(x, params[f'{prefix}.g'], params[f'{prefix}.b'])


def init_attention_block(rng: np.random.Generator, params: Params, prefix: str, d_model: int,
                         mlp_ratio: int = 2, cross: bool = False) -> None:
    init_norm(params, f'{prefix}.ln_q', d_model)
    if cross:
        init_norm(params, f'{prefix}.ln_kv', d_model)
    for proj in ('q', 'k', 'v'):
        init_linear(rng, params, f'{prefix}.{proj}', d_model, d_model, bias=False)
    init_linear(rng, params, f'{prefix}.o', d_model, d_model, scale=0.5)
    init_norm(params, f'{prefix}.ln_mlp', d_model)
    init_linear(rng, params, f'{prefix}.fc1', d_model, mlp_ratio * d_model)
    init_linear(rng, params, f'{prefix}.fc2', mlp_ratio * d_model, d_model, scale=0.5)


def attention_block(params: Params, prefix: str, x: Tensor, n_heads: int,
                    context: Optional[Tensor] = None, mask: Optional[np.ndarray] = None) -> Tensor:
    """Multi-head self-attention (``context`` None) or cross-attention, then an MLP."""
    h = norm(params, f'{prefix}.ln_q', x)
    ctx = h if context is None else norm(params, f'{prefix}.ln_kv', context)
    q = linear(params, f'{prefix}.q', h)
    k = linear(params, f'{prefix}.k', ctx)
    v = linear(params, f'{prefix}.v', ctx)
    d_model = q.data.shape[1]
    d_head = d_model // n_heads
    heads = []
    for i in range(n_heads):
        cols = slice(i * d_head, (i + 1) * d_head)
        heads.append(attention(take(q, cols=cols), take(k, cols=cols), take(v, cols=cols), d_head, mask))
    merged = heads[0] if n_heads == 1 else concat(heads, axis=1)
    x = add(x, linear(params, f'{prefix}.o', merged))
    hidden = relu(linear(params, f'{prefix}.fc1', norm(params, f'{prefix}.ln_mlp', x)))
    return add(x, linear(params, f'{prefix}.fc2', hidden))


def init_point_encoder(rng: np.random.Generator, params: Params, prefix: str, point_dim: int,
                       d_model: int, latent_len: int, self_layers: int, mlp_ratio: int) -> None:
    """Learned latent queries that cross-attend to embedded points, then self-attend."""
    params[f'{prefix}.latents'] = parameter(rng.normal(0.0, 1.0, size=(latent_len, d_model)), f'{prefix}.latents')
    init_linear(rng, params, f'{prefix}.embed', point_dim, d_model)
    init_attention_block(rng, params, f'{prefix}.cross', d_model, mlp_ratio, cross=True)
    for i in range(self_layers):
        init_attention_block(rng, params, f'{prefix}.self{i}', d_model, mlp_ratio)


def encode_points(params: Params, prefix: str, points: np.ndarray, n_heads: int, self_layers: int) -> Tensor:
    """Fixed-size latent array (latent_len x d_model) for any number of points.

    No positional information is attached to points, so the result does not
    depend on their order.
    """
    embedded = linear(params, f'{prefix}.embed', Tensor(points))
    z = attention_block(params, f'{prefix}.cross', params[f'{prefix}.latents'], n_heads, context=embedded)
    for i in range(self_layers):
        z = attention_block(params, f'{prefix}.self{i}', z, n_heads)
    return z


class NetworkModel:
    """Config + named parameters + checkpoint I/O."""

    model_kind = 'network'
    config_class: Type[BaseModel] = BaseModel

    def __init__(self, config, params: Params):
        self.config = config
        self.params = params

    @classmethod
    def build_params(cls, config, rng: np.random.Generator) -> Params:
        raise NotImplementedError

    @classmethod
    def create(cls, config, seed: int = 0) -> 'NetworkModel':
        return cls(config, cls.build_params(config, np.random.default_rng(seed)))

    @property
    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def astype(self, dtype_name: str) -> 'NetworkModel':
        for p in self.params.values():
            p.data = p.data.astype(dtype_name)
        return self

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def save(self, path, extra: Optional[Dict[str, np.ndarray]] = None,
             meta: Optional[Dict[str, Any]] = None) -> Path:
        arrays = self.arrays()
        arrays.update(extra or {})
        return save_checkpoint(path, self.model_kind, self.config.model_dump(mode='json'), arrays, meta)

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> 'NetworkModel':
        if checkpoint.model_kind != cls.model_kind:
            raise CheckpointError(f"Expected a '{cls.model_kind}' checkpoint, found '{checkpoint.model_kind}'")
        try:
            config = cls.config_class.model_validate(checkpoint.hyperparameters)
        except ValidationError as exc:
            raise CheckpointError(f'Checkpoint hyperparameters are invalid: {exc}') from exc
        template = cls.build_params(config, np.random.default_rng(0))
        params: Params = {}
        for name, tmpl in template.items():
            arr = checkpoint.arrays.get(name)
            if arr is None or arr.shape != tmpl.data.shape:
                raise CheckpointError(f"Checkpoint entry '{name}' is missing or has the wrong shape")
            params[name] = parameter(arr, name)
        return cls(config, params)

    @classmethod
    def load(cls, path) -> 'NetworkModel':
        return cls.from_checkpoint(load_checkpoint(path, expected_kind=cls.model_kind))
