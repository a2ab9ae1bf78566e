"""Tensor, parameters and the reverse-mode pass.

Every op records its parents and a backward closure on the output tensor.
A monotonically increasing id is stamped on each tensor at creation, so the
insertion order of a graph is a valid topological order and ``backward``
only needs to sort the reachable nodes by id.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()
_grad_enabled = True
_default_dtype = np.float32


class DiffcoreError(Exception):
    """Base error of the differentiation engine."""


class ConfigurationError(DiffcoreError, ValueError):
    """Bad shapes, strides or hyperparameters handed to a primitive."""


class UsageError(DiffcoreError, RuntimeError):
    """The engine was driven incorrectly (e.g. backward on a non-scalar)."""


class NonFiniteError(DiffcoreError, FloatingPointError):
    """NaN or Inf showed up in a forward or backward pass."""


def default_dtype():
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ConfigurationError(f"unsupported dtype {dtype!r}")
    _default_dtype = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (float64 for gradient checks)."""
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    """Build tensors without recording parents or backward closures."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype or _default_dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # Arithmetic sugar; the primitives live in ``ops``.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            raise UsageError("division by a Tensor is not a primitive; multiply by a constant")
        return ops.mul(self, 1.0 / float(other))

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def _raise_item(t: Tensor):
    raise UsageError(f"item() needs a single-element tensor, got shape {t.shape}")


class Parameter(Tensor):
    """Trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None, dtype=None):
        super().__init__(np.array(data, dtype=dtype or _default_dtype), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op output; attach the backward closure only when it is needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._id = next(_ids)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


class Graph:
    """The recorded computation reachable from one output node.

    ``nodes`` is in insertion (creation) order, which is topological.
    """

    def __init__(self, output: Tensor):
        seen: dict[int, Tensor] = {}
        stack = [output]
        while stack:
            t = stack.pop()
            if t._id in seen:
                continue
            seen[t._id] = t
            stack.extend(t._parents)
        self.output = output
        self.nodes: list[Tensor] = [seen[k] for k in sorted(seen)]

    @property
    def parameters(self) -> list[Tensor]:
        return [t for t in self.nodes if isinstance(t, Parameter)]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None, check_finite: bool = True):
    """Reverse-mode pass from a scalar ``loss``.

    Gradients accumulate into ``.grad`` of every reachable tensor that
    requires grad. When ``params`` is given, a list of gradient arrays in the
    same order is returned; parameters the loss does not touch get zeros.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = Graph(loss)
    for t in graph.nodes:
        if t._backward is not None:
            t.grad = None
    loss.grad = np.ones_like(loss.data)
    for t in reversed(graph.nodes):
        if t._backward is None or t.grad is None:
            continue
        t._backward(t.grad)
    # Intermediate grads are dead weight once the pass is done.
    for t in graph.nodes:
        if t._backward is not None and t is not loss:
            t.grad = None
    if params is None:
        return None
    grads = []
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if check_finite and not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {p.name!r}")
        grads.append(g)
    return grads
