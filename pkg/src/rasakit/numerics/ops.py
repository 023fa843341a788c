"""Differentiable primitives. Every op returns a new Tensor and records its VJP."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .tensor import MASK_NEG, Tensor, as_tensor, record


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return record(out, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting (``add_broadcast``)."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = Tensor(a.data + b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


add_broadcast = add


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = Tensor(a.data - b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with broadcasting (``elementwise_mul``)."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = Tensor(a.data * b.data)

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return record(out, (a, b), vjp)


elementwise_mul = mul


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    return record(out, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    out = Tensor(np.where(pos, a.data, 0.0))
    return record(out, (a,), lambda g: (np.where(pos, g, 0.0),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = Tensor(s)
    return record(out, (a,), lambda g: (g * s * (1.0 - s),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.transpose(a.data, axes))
    return record(out, (a,), lambda g: (np.transpose(g, inverse),))


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    return record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean())
    return record(out, (a,), lambda g: (np.full(a.shape, g / n),))


def take_rows(table: Tensor, index) -> Tensor:
    """Embedding lookup: ``table[index]`` along the first axis."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeMismatch(f"row index out of range for table of {table.shape[0]} rows")
    out = Tensor(table.data[index])

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index, g)
        return (gt,)

    return record(out, (table,), vjp)


def gather_bias(bias_table: Tensor, edge_types) -> Tensor:
    """Look up one scalar bias per attention pair from a relation-index grid.

    ``edge_types`` is an EdgeTypeMap (or its raw grid). SELF entries read the
    slot after the last relation; NONE entries read a constant 0.
    """
    from ..graph import NONE, SELF

    grid = np.asarray(getattr(edge_types, "type_of", edge_types), dtype=np.int64)
    num_relations = bias_table.shape[0] - 1
    if bias_table.data.ndim != 1:
        raise ShapeMismatch(f"bias table must be 1-D, got {bias_table.shape}")
    idx = np.where(grid == SELF, num_relations, grid)
    valid = grid != NONE
    if np.any(idx[valid] >= num_relations + 1) or np.any(idx[valid] < 0):
        raise ShapeMismatch("edge type index exceeds bias table length")
    idx = np.where(valid, idx, 0)
    out = Tensor(np.where(valid, bias_table.data[idx], 0.0))

    def vjp(g):
        gt = np.zeros_like(bias_table.data)
        np.add.at(gt, idx[valid], g[valid])
        return (gt,)

    return record(out, (bias_table,), vjp)


def masked_softmax_rows(scores: Tensor, mask) -> Tensor:
    """Softmax over the last axis restricted to ``mask``; masked outputs are exactly 0.

    ``mask`` is an AttentionMask or a boolean array broadcastable to ``scores``.
    """
    allowed = np.asarray(getattr(mask, "allowed", mask), dtype=bool)
    if scores.data.ndim < 2 or scores.shape[-1] != scores.shape[-2]:
        raise ShapeMismatch(f"scores must be square in the last two axes, got {scores.shape}")
    try:
        np.broadcast_shapes(allowed.shape, scores.shape)
    except ValueError:
        raise ShapeMismatch(f"mask {allowed.shape} does not fit scores {scores.shape}") from None
    s = np.where(allowed, scores.data, MASK_NEG)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    p = e / e.sum(axis=-1, keepdims=True)
    p = np.where(allowed, p, 0.0)
    out = Tensor(p)

    def vjp(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - inner),)

    return record(out, (scores,), vjp)


def softmax_rows(scores: Tensor) -> Tensor:
    return masked_softmax_rows(scores, np.ones(scores.shape[-2:], dtype=bool))


def binary_cross_entropy_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean BCE over all entries of ``logits`` against 0/1 ``targets``."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeMismatch(f"targets {y.shape} vs logits {logits.shape}")
    x = logits.data
    n = x.size
    out = Tensor(np.mean(np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))))
    return record(out, (logits,), lambda g: (g * (_sigmoid(x) - y) / n,))


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeMismatch(f"layer_norm parameters must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_sigma = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_sigma
    out = Tensor(xhat * gain.data + shift.data)

    def vjp(g):
        dxhat = g * gain.data
        dx = inv_sigma * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return (
            dx,
            _unbroadcast(g * xhat, gain.shape) if gain.requires_grad else None,
            _unbroadcast(g, shift.shape) if shift.requires_grad else None,
        )

    return record(out, (x, gain, shift), vjp)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    out = Tensor(x.data * keep)
    return record(out, (x,), lambda g: (g * keep,))


def masked_fill(a: Tensor, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is False with the constant ``value``."""
    keep = np.asarray(getattr(mask, "allowed", mask), dtype=bool)
    out = Tensor(np.where(keep, a.data, value))
    return record(out, (a,), lambda g: (_unbroadcast(np.where(keep, g, 0.0), a.shape),))
