"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op below computes its result eagerly with numpy and, when some input
requires gradients, records a closure that scatters the output gradient back
to its parents. Tensor.backward() replays those closures in reverse
topological order. Storage is always 64-bit floats; graphs are built per
forward pass and dropped afterwards.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError

Array = np.ndarray


def _as_array(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _swap_last(x: Array) -> Array:
    return np.swapaxes(x, -1, -2)


def _accumulate(t: "Tensor", g: Array) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _is_basic_key(key) -> bool:
    # Basic slicing visits each target element at most once, so `+=` on the
    # sliced view is a correct scatter; anything fancy goes through np.add.at.
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, np.integer, slice, type(Ellipsis), type(None))) for p in parts)


class Tensor:
    """A numpy array plus a gradient slot and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple = ()
        self._backward = None

    # ---- construction helpers -------------------------------------------

    @staticmethod
    def _node(data: Array, parents, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ---- arithmetic ------------------------------------------------------

    def __add__(self, other):
        other = ensure_tensor(other)
        data = self.data + other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(data)

        def backward(g):
            if self.requires_grad:
                _accumulate(self, _unbroadcast(g, self.data.shape))
            if other.requires_grad:
                _accumulate(other, _unbroadcast(g, other.data.shape))

        return Tensor._node(data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        if not self.requires_grad:
            return Tensor(-self.data)

        def backward(g):
            _accumulate(self, -g)

        return Tensor._node(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-ensure_tensor(other))

    def __rsub__(self, other):
        return ensure_tensor(other) + (-self)

    def __mul__(self, other):
        other = ensure_tensor(other)
        data = self.data * other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(data)

        def backward(g):
            if self.requires_grad:
                _accumulate(self, _unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                _accumulate(other, _unbroadcast(g * self.data, other.data.shape))

        return Tensor._node(data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = ensure_tensor(other)
        data = self.data / other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(data)

        def backward(g):
            if self.requires_grad:
                _accumulate(self, _unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                _accumulate(other, _unbroadcast(-g * self.data / (other.data * other.data), other.data.shape))

        return Tensor._node(data, (self, other), backward)

    def __rtruediv__(self, other):
        return ensure_tensor(other) / self

    def __pow__(self, p):
        p = float(p)
        data = self.data ** p
        if not self.requires_grad:
            return Tensor(data)

        def backward(g):
            _accumulate(self, g * p * self.data ** (p - 1.0))

        return Tensor._node(data, (self,), backward)

    def __matmul__(self, other):
        other = ensure_tensor(other)
        if self.data.ndim < 2 or other.data.ndim < 2:
            raise ShapeError("matmul expects operands with at least 2 dimensions")
        if self.data.shape[-1] != other.data.shape[-2]:
            raise ShapeError(f"matmul inner dimensions differ: {self.data.shape} @ {other.data.shape}")
        data = self.data @ other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(data)

        def backward(g):
            if self.requires_grad:
                _accumulate(self, _unbroadcast(g @ _swap_last(other.data), self.data.shape))
            if other.requires_grad:
                _accumulate(other, _unbroadcast(_swap_last(self.data) @ g, other.data.shape))

        return Tensor._node(data, (self, other), backward)

    # ---- elementwise -----------------------------------------------------

    def exp(self):
        data = np.exp(self.data)
        if not self.requires_grad:
            return Tensor(data)

        def backward(g):
            _accumulate(self, g * data)

        return Tensor._node(data, (self,), backward)

    def log(self):
        data = np.log(self.data)
        if not self.requires_grad:
            return Tensor(data)

        def backward(g):
            _accumulate(self, g / self.data)

        return Tensor._node(data, (self,), backward)

    def tanh(self):
        data = np.tanh(self.data)
        if not self.requires_grad:
            return Tensor(data)

        def backward(g):
            _accumulate(self, g * (1.0 - data * data))

        return Tensor._node(data, (self,), backward)

    def sigmoid(self):
        x = self.data
        data = np.empty_like(x)
        pos = x >= 0
        data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        data[~pos] = ex / (1.0 + ex)
        if not self.requires_grad:
            return Tensor(data)

        def backward(g):
            _accumulate(self, g * data * (1.0 - data))

        return Tensor._node(data, (self,), backward)

    def relu(self):
        data = np.maximum(self.data, 0.0)
        if not self.requires_grad:
            return Tensor(data)

        def backward(g):
            _accumulate(self, g * (self.data > 0.0))

        return Tensor._node(data, (self,), backward)

    # ---- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)
        if not self.requires_grad:
            return Tensor(data)
        src_shape = self.data.shape

        def backward(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(g, axis)
            _accumulate(self, np.broadcast_to(gg, src_shape))

        return Tensor._node(data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        data = self.data.mean(axis=axis, keepdims=keepdims)
        if not self.requires_grad:
            return Tensor(data)
        src_shape = self.data.shape
        count = self.data.size / max(data.size, 1)

        def backward(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(g, axis)
            _accumulate(self, np.broadcast_to(gg / count, src_shape))

        return Tensor._node(data, (self,), backward)

    # ---- shape -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        data = self.data.reshape(shape)
        if not self.requires_grad:
            return Tensor(data)
        src_shape = self.data.shape

        def backward(g):
            _accumulate(self, g.reshape(src_shape))

        return Tensor._node(data, (self,), backward)

    def transpose(self, axes):
        axes = tuple(axes)
        data = self.data.transpose(axes)
        if not self.requires_grad:
            return Tensor(data)
        inv = tuple(np.argsort(axes))

        def backward(g):
            _accumulate(self, g.transpose(inv))

        return Tensor._node(data, (self,), backward)

    def __getitem__(self, key):
        data = self.data[key]
        if not self.requires_grad:
            return Tensor(data)
        src_shape = self.data.shape
        basic = _is_basic_key(key)

        def backward(g):
            buf = np.zeros(src_shape)
            if basic:
                buf[key] += g
            else:
                np.add.at(buf, key, g)
            _accumulate(self, buf)

        return Tensor._node(data, (self,), backward)

    # ---- backprop --------------------------------------------------------

    def backward(self):
        """Backpropagate from a scalar loss through the recorded graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; rows of -inf scores get exactly zero weight."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)
    if not x.requires_grad:
        return Tensor(data)

    def backward(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(x, data * (g - inner))

    return Tensor._node(data, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    data = z - lse
    if not x.requires_grad:
        return Tensor(data)

    def backward(g):
        _accumulate(x, g - np.exp(data) * g.sum(axis=axis, keepdims=True))

    return Tensor._node(data, (x,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [ensure_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    if not any(t.requires_grad for t in tensors):
        return Tensor(data)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(idx)])

    return Tensor._node(data, tensors, backward)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Rows of `table` gathered by an integer index array."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("embedding indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError(f"embedding index out of range for table of {table.data.shape[0]} rows")
    data = table.data[idx]
    if not table.requires_grad:
        return Tensor(data)

    def backward(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx, g)
        _accumulate(table, buf)

    return Tensor._node(data, (table,), backward)
