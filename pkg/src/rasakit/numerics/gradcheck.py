"""Central finite-difference gradient checker."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import NonFinite
from .tensor import GradientTape, Parameter, Tensor


def finite_diff_check(f: Callable[[], Tensor], p: Parameter, epsilon: float = 1e-5) -> float:
    """Max relative error between the tape gradient of ``f`` w.r.t. ``p`` and central differences.

    ``f`` must be deterministic and read ``p`` from its closure. The relative
    error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    saved_grad = p.grad
    p.zero_grad()
    with GradientTape() as tape:
        loss = f()
    _require_finite(loss.data)
    tape.backward(loss)
    analytic = p.grad.copy()
    p.grad = saved_grad

    numeric = np.empty_like(p.data)
    flat = p.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        up = f().item()
        flat[i] = orig - epsilon
        down = f().item()
        flat[i] = orig
        _require_finite(np.array([up, down]))
        numeric.reshape(-1)[i] = (up - down) / (2.0 * epsilon)

    err = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(err.max()) if err.size else 0.0


def _require_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFinite("function produced NaN or Inf")
