"""Reverse-mode automatic differentiation over dense float64 arrays.

Each operation returns a new :class:`Tensor` holding its parents and a
closure that pushes the output gradient back to them.  ``backward`` sorts the
graph topologically and runs the closures in reverse order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference only)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents: Sequence[Tensor] = (),
                 backward: Callable[[np.ndarray], None] | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # gradients may alias arrays held elsewhere (or be broadcast views),
        # so they are never updated in place
        if self.grad is None:
            self.grad = g if g.shape == self.data.shape else np.broadcast_to(g, self.data.shape)
        else:
            self.grad = self.grad + g

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return index(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward=backward)


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor that ``loss`` depends on."""
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if node._parents:
                # intermediate gradients are not needed once pushed back
                node.grad = None if node is not loss else node.grad


# --------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(g, b.shape))
    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(-g, b.shape))
    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(g * a.data, b.shape))
    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(-g * a.data / b.data**2, b.shape))
    return _make(a.data / b.data, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: a._accumulate(-g))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * (1.0 - out**2)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: a._accumulate(g * pos))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * out))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: a._accumulate(g / a.data))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data**2, (a,), lambda g: a._accumulate(2.0 * g * a.data))


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g * pick_a, a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(g * ~pick_a, b.shape))
    return _make(np.where(pick_a, a.data, b.data), (a, b), bw)


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: a._accumulate(g * inside))


# ---------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))
    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[x] for x in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


# ------------------------------------------------------------------- shape

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))


def swapaxes(a, ax1: int = -1, ax2: int = -2) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: a._accumulate(np.swapaxes(g, ax1, ax2)))


def index(a, idx) -> Tensor:
    """Basic or advanced indexing; the gradient scatters back with ``np.add.at``."""
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)
    return _make(a.data[idx], (a,), bw)


def take(a, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather slices along ``axis``; repeated indices accumulate gradient."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(np.moveaxis(a.data, axis, 0))
        np.add.at(full, indices, np.moveaxis(g, axis, 0))
        a._accumulate(np.moveaxis(full, 0, axis))
    return _make(np.take(a.data, indices, axis=axis), (a,), bw)


def take_along(a, indices: np.ndarray, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, indices, g, axis=axis)
        a._accumulate(full)
    return _make(np.take_along_axis(a.data, indices, axis=axis), (a,), bw)


def scatter_add(a, indices: np.ndarray, size: int) -> Tensor:
    """Segment sum along axis 0: ``out[indices[i]] += a[i]``."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((size,) + a.shape[1:])
    np.add.at(out, indices, a.data)
    return _make(out, (a,), lambda g: a._accumulate(g[indices]))


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, cuts, axis=axis)):
            if t.requires_grad:
                t._accumulate(part)
    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


# ------------------------------------------------------------------ linear

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (numpy broadcasting rules)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least two dimensions")

    def bw(g):
        if a.requires_grad:
            a._accumulate(unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
    return _make(a.data @ b.data, (a, b), bw)


# ----------------------------------------------------------- masked softmax

def masked_log_softmax(x, mask: np.ndarray, axis: int = -1) -> Tensor:
    """log softmax restricted to ``mask``; masked slots output 0 and get no gradient.

    Equivalent to setting masked logits to -inf, with the masked log
    probabilities (which would be -inf) replaced by 0 so downstream products
    with a zero probability stay finite.
    """
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    filled = np.where(mask, x.data, -np.inf)
    top = np.max(filled, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    shifted = np.where(mask, x.data - top, -np.inf)
    ex = np.exp(shifted)
    total = ex.sum(axis=axis, keepdims=True)
    safe_total = np.where(total > 0, total, 1.0)
    prob = ex / safe_total
    out = np.where(mask, x.data - top - np.log(safe_total), 0.0)

    def bw(g):
        g = np.where(mask, g, 0.0)
        x._accumulate(g - prob * g.sum(axis=axis, keepdims=True))
    return _make(out, (x,), bw)


def masked_softmax(x, mask: np.ndarray, axis: int = -1) -> Tensor:
    """softmax restricted to ``mask``; rows without any valid slot are all zero."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    filled = np.where(mask, x.data, -np.inf)
    top = np.max(filled, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    ex = np.where(mask, np.exp(np.where(mask, x.data - top, 0.0)), 0.0)
    total = ex.sum(axis=axis, keepdims=True)
    prob = ex / np.where(total > 0, total, 1.0)

    def bw(g):
        x._accumulate(prob * (g - (g * prob).sum(axis=axis, keepdims=True)))
    return _make(prob, (x,), bw)
