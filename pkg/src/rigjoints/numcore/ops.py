"""Differentiable operations on :class:`Tensor`.

Each op computes its forward value with numpy and registers a backward rule
on the active tape. Backward rules return one gradient per input (``None``
for inputs that carry no gradient).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import ContractError, DimensionError, NumericError, Tensor, as_tensor, make_output

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return make_output(out, "add", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return make_output(out, "sub", (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_output(out, "mul", (a, b), back)


def total(x: Tensor) -> Tensor:
    """Sum of all entries as a scalar tensor."""
    return make_output(np.asarray(x.data.sum()), "sum", (x,), lambda g: (np.full_like(x.data, g),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} @ {b.shape}")
    return make_output(a.data @ b.data, "matmul", (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got {x.shape}")
    return make_output(np.ascontiguousarray(x.data.T), "transpose", (x,), lambda g: (g.T,))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear shapes x={x.shape} weight={weight.shape} bias={bias.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, weight.shape[0])
    out = (x2 @ weight.data + bias.data).reshape(*lead, weight.shape[1])

    def back(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        return gx, x2.T @ g2, g2.sum(axis=0)

    return make_output(out, "linear", (x, weight, bias), back)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ContractError(f"slope must lie in (0, 1), got {slope}")
    pos = x.data >= 0
    out = np.where(pos, x.data, slope * x.data)
    return make_output(out, "leaky_relu", (x,), lambda g: (np.where(pos, g, slope * g),))


@dataclass
class RunningStats:
    """Exponential moving averages of per-feature mean and variance."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @classmethod
    def fresh(cls, features: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> "RunningStats":
        return cls(np.zeros(features), np.ones(features), momentum, eps)

    def update(self, batch_mean: np.ndarray, batch_var_unbiased: np.ndarray) -> None:
        m = self.momentum
        self.mean = (1.0 - m) * self.mean + m * batch_mean
        self.var = (1.0 - m) * self.var + m * batch_var_unbiased


def batch_norm_points(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats, mode: str = "train") -> Tensor:
    """Per-feature normalization over every leading axis of ``x``.

    With batch size one the leading axes are points (and neighbors, for edge
    tensors). Train mode uses population statistics of the batch and updates
    ``stats``; eval mode reads ``stats`` and leaves them untouched.
    """
    feats = x.shape[-1]
    if gamma.shape != (feats,) or beta.shape != (feats,):
        raise DimensionError(f"batch norm parameters must have shape ({feats},)")
    x2 = x.data.reshape(-1, feats)
    rows = x2.shape[0]
    if mode == "train":
        if rows < 2:
            raise ContractError("batch norm in train mode needs at least 2 rows (degenerate batch)")
        mu = x2.mean(axis=0)
        centered = x2 - mu
        var = (centered * centered).mean(axis=0)
        stats.update(mu, var * rows / (rows - 1))
    elif mode == "eval":
        mu, var = stats.mean, stats.var
        centered = x2 - mu
    else:
        raise ContractError(f"unknown batch norm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + stats.eps)
    xhat = centered * inv_std
    out = (xhat * gamma.data + beta.data).reshape(x.shape)

    def back(g):
        g2 = g.reshape(-1, feats)
        g_gamma = (g2 * xhat).sum(axis=0)
        g_beta = g2.sum(axis=0)
        dxhat = g2 * gamma.data
        if mode == "train":
            gx = inv_std * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
        else:
            gx = dxhat * inv_std
        return gx.reshape(x.shape), g_gamma, g_beta

    return make_output(out, "batch_norm_points", (x, gamma, beta), back)


def softmax_over_points(logits: Tensor) -> Tensor:
    """Column-wise softmax: each column of the result is a probability vector over rows."""
    if logits.ndim != 2:
        raise DimensionError(f"softmax_over_points needs N x J logits, got {logits.shape}")
    if not np.isfinite(logits.data).all():
        raise NumericError("softmax_over_points received non-finite logits")
    shifted = logits.data - logits.data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=0, keepdims=True)

    def back(g):
        return (probs * (g - (g * probs).sum(axis=0, keepdims=True)),)

    return make_output(probs, "softmax_over_points", (logits,), back)


def neighbor_max_pool(edge_feats: Tensor) -> Tensor:
    """Max over the neighbor axis of an ``N x k x F`` tensor.

    The gradient goes to the first maximizing neighbor only.
    """
    if edge_feats.ndim != 3:
        raise DimensionError(f"neighbor_max_pool needs N x k x F, got {edge_feats.shape}")
    arg = edge_feats.data.argmax(axis=1)[:, None, :]
    out = np.take_along_axis(edge_feats.data, arg, axis=1)[:, 0, :]

    def back(g):
        gx = np.zeros_like(edge_feats.data)
        np.put_along_axis(gx, arg, g[:, None, :], axis=1)
        return (gx,)

    return make_output(out, "neighbor_max_pool", (edge_feats,), back)


def concat_features(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis, in the given order."""
    if not parts:
        raise ContractError("concat_features needs at least one part")
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead:
            raise DimensionError(f"concat_features row mismatch: {p.shape[:-1]} vs {lead}")
    widths = [p.shape[-1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=-1)
    bounds = np.cumsum([0] + widths)

    def back(g):
        return tuple(np.ascontiguousarray(g[..., bounds[i] : bounds[i + 1]]) for i in range(len(parts)))

    return make_output(out, "concat_features", tuple(parts), back)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """``x[index]`` for an integer index array of any shape."""
    index = np.asarray(index, dtype=np.intp)
    out = x.data[index]

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index.reshape(-1), g.reshape(-1, *x.shape[1:]))
        return (gx,)

    return make_output(out, "gather_rows", (x,), back)


def squared_error_sum(pred: Tensor, target) -> Tensor:
    """``sum((pred - target)**2)`` as a scalar."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ContractError(f"squared_error_sum shapes {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    value = np.asarray(np.sum(diff * diff))
    return make_output(value, "squared_error_sum", (pred, target), lambda g: (2.0 * g * diff, -2.0 * g * diff))


@dataclass
class ParamInit:
    """Seeded initializer: weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""

    seed: int = 0
    rng: np.random.Generator = field(init=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def weight(self, fan_in: int, fan_out: int, name: str | None = None) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(self.rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=name)

    @staticmethod
    def bias(n: int, name: str | None = None) -> Tensor:
        return Tensor(np.zeros(n), requires_grad=True, name=name)

    @staticmethod
    def ones(n: int, name: str | None = None) -> Tensor:
        return Tensor(np.ones(n), requires_grad=True, name=name)
