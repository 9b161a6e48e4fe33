"""Minimal reverse-mode automatic differentiation on numpy arrays.

Operations executed while a ``Tape`` is active (``with Tape() as tape:``) are
recorded in creation order; ``tape.backward(loss)`` walks the record once in
reverse and leaves gradients on every leaf tensor that requires them. With no
active tape the same functions run as plain numpy inference.

Shapes are explicit: the only broadcasting supported is a row bias added to a
matrix and Python scalars combined elementwise.
"""
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

Number = Union[int, float]

_DTYPE = {'value': np.float64}
_local = threading.local()


class NonFiniteError(ValueError):
    """A forward operation produced NaN or Inf."""


def set_default_dtype(name: str) -> None:
    if name not in ('float64', 'float32'):
        raise ValueError(f'Unsupported dtype {name}')
    _DTYPE['value'] = np.dtype(name).type


def get_default_dtype():
    return _DTYPE['value']


# ----------------------------------------------------------------------
# Tape
# ----------------------------------------------------------------------

class Tape:
    """Ordered record of the operations of one forward pass."""

    def __init__(self):
        self.nodes: List['Tensor'] = []
        self.consumed = False

    def __enter__(self) -> 'Tape':
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().pop()
        return False

    def record(self, tensor: 'Tensor') -> None:
        if self.consumed:
            raise ValueError('Tape was already consumed by backward(); call reset() first')
        self.nodes.append(tensor)

    def reset(self) -> None:
        self.nodes = []
        self.consumed = False

    def backward(self, loss: 'Tensor') -> Dict[int, np.ndarray]:
        """Propagate d(loss)/d(node) back to every leaf; returns grads keyed by id(leaf)."""
        if loss.data.size != 1:
            raise ValueError(f'backward() needs a scalar loss, got shape {loss.shape}')
        if self.consumed:
            raise ValueError('Tape was already consumed by backward(); call reset() first')
        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: Dict[int, Tensor] = {}
        if loss._backward is None and loss.requires_grad:
            leaves[id(loss)] = loss
        for node in reversed(self.nodes):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad
                if parent._backward is None:
                    leaves[key] = parent
        for key, leaf in leaves.items():
            leaf.grad = grads.get(key)
        self.nodes = []
        self.consumed = True
        return {key: leaf.grad for key, leaf in leaves.items()}


def _stack() -> List[Tape]:
    if not hasattr(_local, 'stack'):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


# ----------------------------------------------------------------------
# Tensor
# ----------------------------------------------------------------------

class Tensor:
    """Shape-tagged array, optionally tracked by the active tape."""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        self.data = np.array(data, dtype=dtype or get_default_dtype())
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.op = 'leaf'

    @property
    def shape(self) -> List[int]:
        return list(self.data.shape)

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" '{self.name}'" if self.name else ''
        return f'Tensor{label}(shape={self.shape}, op={self.op})'

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"Non-finite values produced by '{op}'")
    tape = active_tape()
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.grad = None
    out.op = op
    out._parents = ()
    out._backward = None
    out.requires_grad = tape is not None and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
        tape.record(out)
    return out


def _is_bias(a: np.ndarray, b: np.ndarray) -> bool:
    return a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"'{op}' shape mismatch: {a.shape} vs {b.shape}")


# ----------------------------------------------------------------------
# Core ops
# ----------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return _result(a.data + b, (a,), lambda g: (g,), 'add_scalar')
    b = as_tensor(b)
    if _is_bias(a.data, b.data):
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)), 'add_bias')
    _check_same('add', a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g), 'add')


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return _result(a.data - b, (a,), lambda g: (g,), 'sub_scalar')
    b = as_tensor(b)
    if _is_bias(a.data, b.data):
        return _result(a.data - b.data, (a, b), lambda g: (g, -g.sum(axis=0)), 'sub_bias')
    _check_same('sub', a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), 'sub')


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), 'neg')


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return _result(a.data * b, (a,), lambda g: (g * b,), 'mul_scalar')
    b = as_tensor(b)
    _check_same('mul', a, b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), 'mul')


def div(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return _result(a.data / b, (a,), lambda g: (g / b,), 'div_scalar')
    b = as_tensor(b)
    _check_same('div', a, b)
    return _result(a.data / b.data, (a, b),
                   lambda g: (g / b.data, -g * a.data / (b.data * b.data)), 'div')


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f'matmul shape mismatch: {a.shape} @ {b.shape}')
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), 'matmul')


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f'transpose needs a matrix, got shape {a.shape}')
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,), 'transpose')


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    ranks = {t.data.ndim for t in tensors}
    if len(ranks) != 1:
        raise ValueError('concat needs tensors of equal rank')
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ValueError(f'concat shape mismatch: {[t.shape for t in tensors]}') from exc
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]
    return _result(data, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), 'concat')


def take(a: Tensor, rows=None, cols=None) -> Tensor:
    """Row/column selection by slice or integer index array (the ``slice`` op)."""
    if a.data.ndim != 2:
        raise ValueError(f'take needs a matrix, got shape {a.shape}')
    r = slice(None) if rows is None else rows
    c = slice(None) if cols is None else cols
    if not isinstance(r, slice) and not isinstance(c, slice):
        index = np.ix_(np.asarray(r), np.asarray(c))
    else:
        index = (r, c)
    data = a.data[index]
    if data.ndim != 2:
        raise ValueError('take must keep a matrix; pass index arrays or slices, not scalars')

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)
    return _result(np.array(data), (a,), backward, 'take')


def reduce_sum(a: Tensor) -> Tensor:
    return _result(np.array(a.data.sum()), (a,), lambda g: (np.full_like(a.data, g),), 'sum')


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _result(np.array(a.data.sum() / n), (a,), lambda g: (np.full_like(a.data, g / n),), 'mean')


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0).astype(a.data.dtype), (a,), lambda g: (g * mask,), 'relu')


def softplus(a: Tensor) -> Tensor:
    x = a.data
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _result(np.logaddexp(0.0, x).astype(x.dtype), (a,), lambda g: (g * sig,), 'softplus')


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), 'exp')


def log(a: Tensor) -> Tensor:
    with np.errstate(divide='ignore', invalid='ignore'):
        out = np.log(a.data)
    return _result(out, (a,), lambda g: (g / a.data,), 'log')


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise normalization followed by a learned per-feature affine map."""
    if x.data.ndim != 2 or gain.data.shape != (x.data.shape[1],) or bias.data.shape != gain.data.shape:
        raise ValueError(f'layer_norm shape mismatch: x {x.shape}, gain {gain.shape}, bias {bias.shape}')
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        n = x.data.shape[1]
        gx_hat = g * gain.data
        gx = inv_std / n * (n * gx_hat - gx_hat.sum(axis=1, keepdims=True)
                            - xhat * (gx_hat * xhat).sum(axis=1, keepdims=True))
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)
    return _result(out, (x, gain, bias), backward, 'layer_norm')


def masked_softmax(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over each row; ``mask`` True keeps an entry, False gives it zero weight.

    Rows with every entry masked come back as zeros and are listed in
    ``out.empty_rows``.
    """
    if x.data.ndim != 2:
        raise ValueError(f'masked_softmax needs a matrix, got shape {x.shape}')
    keep = np.ones(x.data.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if keep.shape != x.data.shape:
        raise ValueError(f'mask shape {keep.shape} does not match {x.shape}')
    empty = ~keep.any(axis=1)
    logits = np.where(keep, x.data, -np.inf)
    row_max = np.where(empty, 0.0, logits.max(axis=1, initial=-np.inf))[:, None]
    weights = np.exp(np.where(keep, x.data - row_max, -np.inf))
    norm = weights.sum(axis=1, keepdims=True)
    probs = np.divide(weights, norm, out=np.zeros_like(weights), where=norm > 0).astype(x.data.dtype)

    def backward(g):
        return (probs * (g - (g * probs).sum(axis=1, keepdims=True)),)
    out = _result(probs, (x,), backward, 'masked_softmax')
    out.empty_rows = np.flatnonzero(empty)
    if out.empty_rows.size:
        logger.debug(f'masked_softmax: {out.empty_rows.size} fully masked rows')
    return out


def attention(Q: Tensor, K: Tensor, V: Tensor, d_k: Optional[int] = None,
              mask: Optional[np.ndarray] = None) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V with an optional keep-mask on the logits."""
    d_k = d_k or Q.data.shape[1]
    if Q.data.shape[1] != d_k or K.data.shape[1] != d_k:
        raise ValueError(f'attention d_k mismatch: Q {Q.shape}, K {K.shape}, d_k={d_k}')
    if K.data.shape[0] != V.data.shape[0]:
        raise ValueError(f'attention needs one value per key: K {K.shape}, V {V.shape}')
    scores = mul(matmul(Q, transpose(K)), 1.0 / math.sqrt(d_k))
    return matmul(masked_softmax(scores, mask), V)


def gaussian_log_prob(x, mu: Tensor, sigma: Tensor) -> Tensor:
    """Log density of a diagonal Gaussian, summed over coordinates."""
    x = as_tensor(x)
    z = div(sub(x, mu), sigma)
    d = mu.data.size
    return neg(add(add(reduce_sum(log(sigma)), mul(reduce_sum(mul(z, z)), 0.5)), 0.5 * d * math.log(2.0 * math.pi)))


def gaussian_entropy(sigma: Tensor) -> Tensor:
    """Closed-form entropy sum_j 0.5 log(2 pi e sigma_j^2)."""
    d = sigma.data.size
    return add(reduce_sum(log(sigma)), 0.5 * d * math.log(2.0 * math.pi * math.e))


# ----------------------------------------------------------------------
# Optimizers
# ----------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps_adam: float = 1e-8) -> AdamState:
    """Bias-corrected Adam update, in place on ``params``."""
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"Gradient for '{name}' has shape {g.shape}, parameter {p.data.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - beta1) * g if m is None else beta1 * m + (1.0 - beta1) * g
        v = (1.0 - beta2) * g * g if v is None else beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps_adam)).astype(p.data.dtype)
    return state


def sgd_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], lr: float) -> None:
    """theta <- theta - lr * grad."""
    for name, p in params.items():
        g = grads.get(name)
        if g is not None:
            p.data = (p.data - lr * g).astype(p.data.dtype)


def collect_grads(params: Dict[str, Tensor]) -> Dict[str, np.ndarray]:
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}


def value_and_grad(f: Callable[[Dict[str, Tensor]], Tensor],
                   params: Dict[str, Tensor]) -> Tuple[float, Dict[str, np.ndarray]]:
    """Run ``f`` under a fresh tape and return (loss, grads by parameter name)."""
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = f(params)
    tape.backward(loss)
    return loss.item(), collect_grads(params)


# ----------------------------------------------------------------------
# Verification
# ----------------------------------------------------------------------

def finite_diff_check(f: Callable[[Dict[str, Tensor]], Tensor], params: Dict[str, Tensor],
                      eps: float = 1e-5, names: Optional[Iterable[str]] = None) -> float:
    """Max relative error between tape gradients and central differences.

    Relative error is |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    """
    _, grads = value_and_grad(f, params)
    worst = 0.0
    for name in (names or params.keys()):
        p = params[name]
        flat = p.data.reshape(-1)
        g_ad = grads[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            up = f(params).item()
            flat[i] = original - eps
            down = f(params).item()
            flat[i] = original
            g_fd = (up - down) / (2.0 * eps)
            err = abs(g_ad[i] - g_fd) / max(1e-8, abs(g_ad[i]) + abs(g_fd))
            if err > worst:
                worst = err
                logger.debug(f'finite_diff_check: {name}[{i}] ad={g_ad[i]:.6e} fd={g_fd:.6e}')
    return worst
