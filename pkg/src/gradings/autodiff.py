"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation records its parents and a closure mapping the output
gradient to parent gradients.  ``Tensor.backward`` walks the recorded
graph in reverse topological order.  Outputs are checked for NaN/Inf at
construction so that numerical blow-ups are reported at the op that
produced them rather than at the loss.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NumericError(FloatingPointError):
    """A primitive produced a non-finite value."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op="leaf"):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite value produced by op '{op}'")

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape})"

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _make(data, parents: tuple, backward: Callable, op: str) -> "Tensor":
        needs = any(p.requires_grad for p in parents)
        if not needs:
            return Tensor(data, op=op)
        return Tensor(data, True, _parents=parents, _backward=backward, op=op)

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): _as_array(grad)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                grads[id(p)] = grads[id(p)] + pg if id(p) in grads else pg

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data + b.data, (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data - b.data, (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data * b.data, (a, b),
            lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
            "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data / b.data, (a, b),
            lambda g: (_unbroadcast(g / b.data, a.shape),
                       _unbroadcast(-g * a.data / b.data**2, b.shape)),
            "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")

    def __getitem__(self, idx):
        a = self

        parts = idx if isinstance(idx, tuple) else (idx,)
        basic = all(isinstance(i, (slice, int)) or i is None or i is Ellipsis for i in parts)

        def back(g):
            full = np.zeros_like(a.data)
            if basic:
                full[idx] = g
            else:
                np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(a.data[idx], (a,), back, "getitem")

    def square(self):
        a = self
        return Tensor._make(a.data**2, (a,), lambda g: (2.0 * a.data * g,), "square")

    def exp(self):
        with np.errstate(over="ignore"):
            out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,), "exp")

    def log(self):
        a = self
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(a.data)
        return Tensor._make(out, (a,), lambda g: (g / a.data,), "log")

    def tanh(self):
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out**2),), "tanh")

    def relu(self):
        a = self
        return Tensor._make(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),), "relu")

    def sum(self, axis=None, keepdims=False):
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back, "sum")

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis),
                        tuple(tensors), back, "concat")


def linear(x: Tensor, weight: Tensor, bias: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Masked affine map ``x @ (weight * mask).T + bias``; weight is (out, in)."""
    x = as_tensor(x)
    w = weight.data if mask is None else weight.data * mask

    def back(g):
        gw = g.T @ x.data
        if mask is not None:
            gw = gw * mask
        return g @ w, gw, g.sum(axis=0)

    return Tensor._make(x.data @ w.T + bias.data, (x, weight, bias), back, "linear")


def grad(fn: Callable[..., Tensor], params: Sequence[np.ndarray | Tensor]) -> list[np.ndarray]:
    """Gradients of the scalar ``fn(*params)`` with respect to each param."""
    return value_and_grad(fn, params)[1]


def value_and_grad(fn: Callable[..., Tensor], params: Sequence[np.ndarray | Tensor]):
    leaves = [Tensor(p.data if isinstance(p, Tensor) else p, requires_grad=True) for p in params]
    out = fn(*leaves)
    if out.data.size != 1:
        raise ValueError("grad needs a scalar-valued function")
    if out.requires_grad:
        out.backward()
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad for t in leaves]
    return float(out.data), grads


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None
