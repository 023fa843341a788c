"""Minimal float64 tensor engine with reverse-mode differentiation."""

from .checkpoint import assign_parameters, load_parameters, save_parameters
from .gradcheck import finite_diff_check
from .ops import (
    add,
    add_broadcast,
    binary_cross_entropy_with_logits,
    dropout,
    elementwise_mul,
    gather_bias,
    layer_norm,
    masked_fill,
    masked_softmax_rows,
    matmul,
    mean_all,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_rows,
    sub,
    sum_all,
    take_rows,
    transpose,
)
from .tensor import MASK_NEG, GradientTape, Parameter, Tensor, backward


def glorot(rng, shape, fan_in: int | None = None, fan_out: int | None = None):
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    fan_in = shape[0] if fan_in is None else fan_in
    fan_out = shape[-1] if fan_out is None else fan_out
    limit = (6.0 / (fan_in + fan_out)) ** 0.5
    return rng.uniform(-limit, limit, size=shape)
