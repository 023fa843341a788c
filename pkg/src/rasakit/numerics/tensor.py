"""Dense float64 tensors and a reverse-mode gradient tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeMismatch, TapeReplayed

# Stand-in for -inf on disallowed attention scores; exp(MASK_NEG - max) is exactly 0.
MASK_NEG = -1e30

_tape_stack: list["GradientTape"] = []


class Tensor:
    """A float64 array, optionally tracked by the active :class:`GradientTape`."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the entries."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A trainable leaf tensor with an accumulated gradient of the same shape."""

    __slots__ = ("name", "grad")

    def __init__(self, name: str, data):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class GradientTape:
    """Ordered record of primitive ops, replayed once in reverse by :meth:`backward`.

    Use as a context manager; ops executed inside the block whose inputs
    require gradients are appended in execution (hence topological) order.
    """

    def __init__(self) -> None:
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._replayed = False

    def __enter__(self) -> "GradientTape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.remove(self)

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
        if self._replayed:
            raise TapeReplayed("cannot record onto a tape that has been replayed")
        self._records.append((out, inputs, vjp))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(param) into ``param.grad`` for every Parameter reached."""
        if self._replayed:
            raise TapeReplayed("backward() already ran on this tape")
        if loss.data.size != 1:
            raise ShapeMismatch(f"loss must be a scalar, got shape {loss.shape}")
        self._replayed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, vjp in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if isinstance(inp, Parameter):
                    inp.grad += gi
                else:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
        self._records.clear()


def backward(loss: Tensor, tape: GradientTape) -> None:
    tape.backward(loss)


def active_tape() -> GradientTape | None:
    return _tape_stack[-1] if _tape_stack else None


def record(out: Tensor, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Attach ``out`` to the active tape if any input needs a gradient."""
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, tuple(inputs), vjp)
    return out
