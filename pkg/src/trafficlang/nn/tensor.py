"""Tensors, trainable parameters and the tape that records operations for
the backward pass."""
from __future__ import annotations

import contextlib

import numpy as np

_DEFAULT_DTYPE = np.float32
_TAPES: list["Tape"] = []


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new tensors and parameters.

    ``precision(np.float64)`` is the verification mode for gradient checks.
    """
    global _DEFAULT_DTYPE
    old, _DEFAULT_DTYPE = _DEFAULT_DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def accumulate(self, g):
        # Never in place: an incoming gradient may be a view of another tensor's.
        if self.grad is None:
            self.grad = np.asarray(g, dtype=self.data.dtype)
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """A trainable tensor with two optimizer moment slots and a step counter."""

    __slots__ = ("m", "v", "step")

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.reset_state()

    def reset_state(self):
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step = 0

    def astype(self, dtype) -> "Parameter":
        return Parameter(self.data, dtype=dtype)


class Tape:
    """Ordered record of executed operations.

    Used as a context manager; operations executed inside append a backward
    closure, and :meth:`backward` replays them in exact reverse order.
    """

    def __init__(self):
        self.ops: list = []
        self.names: list[str] = []
        self.visited: list[str] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, name: str, backward):
        self.ops.append(backward)
        self.names.append(name)

    def backward(self, loss: Tensor):
        if loss.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        loss.grad = np.ones_like(loss.data)
        self.visited = []
        for name, fn in zip(reversed(self.names), reversed(self.ops)):
            self.visited.append(name)
            fn()


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
