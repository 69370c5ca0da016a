"""Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Value`` is one node of an acyclic computation graph: it caches its
forward result and knows how to push an incoming adjoint back to its
operands. ``backward()`` topologically sorts the graph reachable from a
scalar loss node and visits each node exactly once, accumulating ``grad``
on every node (leaves included).

Everything is computed in 64-bit floats; inputs of other dtypes are cast
on construction.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from ..exceptions import UsageError

__all__ = ["Value", "as_value", "topo_order"]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Value:
    """One graph node: a float64 array plus the rule for its adjoint."""

    __slots__ = ("data", "grad", "op", "_parents", "_vjp")

    def __init__(self, data, parents: tuple = (), vjp=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Value(op={self.op!r}, shape={self.shape})"

    # -- graph traversal ---------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every node reachable from this scalar."""
        if self.data.ndim != 0:
            raise UsageError(
                f"backward() requires a scalar loss node, got shape {self.shape}"
            )
        order = topo_order(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None:
                continue
            for parent, pgrad in zip(node._parents, node._vjp(node.grad)):
                parent.grad = parent.grad + pgrad

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = as_value(other)
        out = Value(self.data + other.data, (self, other), op="add")
        out._vjp = lambda g: (
            _unbroadcast(g, self.shape),
            _unbroadcast(g, other.shape),
        )
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Value(-self.data, (self,), op="neg")
        out._vjp = lambda g: (-g,)
        return out

    def __sub__(self, other):
        other = as_value(other)
        out = Value(self.data - other.data, (self, other), op="sub")
        out._vjp = lambda g: (
            _unbroadcast(g, self.shape),
            _unbroadcast(-g, other.shape),
        )
        return out

    def __rsub__(self, other):
        return as_value(other) - self

    def __mul__(self, other):
        other = as_value(other)
        out = Value(self.data * other.data, (self, other), op="mul")
        out._vjp = lambda g: (
            _unbroadcast(g * other.data, self.shape),
            _unbroadcast(g * self.data, other.shape),
        )
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_value(other)
        out = Value(self.data / other.data, (self, other), op="div")
        out._vjp = lambda g: (
            _unbroadcast(g / other.data, self.shape),
            _unbroadcast(-g * self.data / (other.data * other.data), other.shape),
        )
        return out

    def __rtruediv__(self, other):
        return as_value(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise UsageError("only constant exponents are supported")
        e = float(exponent)
        out = Value(self.data**e, (self,), op=f"pow{e}")
        out._vjp = lambda g: (g * e * self.data ** (e - 1.0),)
        return out

    def __matmul__(self, other):
        other = as_value(other)
        out = Value(self.data @ other.data, (self, other), op="matmul")
        out._vjp = lambda g: (g @ other.data.T, self.data.T @ g)
        return out

    # -- elementwise functions ----------------------------------------------

    def exp(self):
        out = Value(np.exp(self.data), (self,), op="exp")
        out._vjp = lambda g: (g * out.data,)
        return out

    def log(self):
        out = Value(np.log(self.data), (self,), op="log")
        out._vjp = lambda g: (g / self.data,)
        return out

    def sqrt(self):
        out = Value(np.sqrt(self.data), (self,), op="sqrt")
        out._vjp = lambda g: (g * 0.5 / out.data,)
        return out

    def sigmoid(self):
        out = Value(1.0 / (1.0 + np.exp(-self.data)), (self,), op="sigmoid")
        out._vjp = lambda g: (g * out.data * (1.0 - out.data),)
        return out

    def relu(self):
        out = Value(np.maximum(self.data, 0.0), (self,), op="relu")
        out._vjp = lambda g: (g * (self.data > 0.0),)
        return out

    def clip(self, lo: float, hi: float):
        """Clamp to [lo, hi]; gradient passes through only strictly inside."""
        out = Value(np.clip(self.data, lo, hi), (self,), op="clip")
        mask = (self.data > lo) & (self.data < hi)
        out._vjp = lambda g: (g * mask,)
        return out

    # -- reductions and row-structured ops -----------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = Value(self.data.sum(axis=axis, keepdims=keepdims), (self,), op="sum")

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, self.shape).copy(),)
            ge = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(ge, self.shape).copy(),)

        out._vjp = vjp
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def log_softmax(self):
        """Numerically stable row-wise log-softmax for a 2-D node."""
        z = self.data
        m = z.max(axis=1, keepdims=True)
        shifted = z - m
        lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + m
        out = Value(z - lse, (self,), op="log_softmax")
        out._vjp = lambda g: (g - np.exp(out.data) * g.sum(axis=1, keepdims=True),)
        return out

    def l2_normalize_rows(self, eps: float = 1e-12):
        """Scale each row to unit Euclidean norm (norm floored at eps)."""
        norms = np.sqrt((self.data * self.data).sum(axis=1, keepdims=True))
        norms = np.maximum(norms, eps)
        unit = self.data / norms
        out = Value(unit, (self,), op="l2norm")
        out._vjp = lambda g: ((g - unit * (unit * g).sum(axis=1, keepdims=True)) / norms,)
        return out


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def topo_order(root: Value) -> list[Value]:
    """Parents-before-children ordering of the graph reachable from root."""
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def gradients(loss: Value, params: Sequence[Value]) -> list[np.ndarray]:
    """Run backward from ``loss`` and return the gradients of ``params``."""
    loss.backward()
    out = []
    for p in params:
        out.append(p.grad if p.grad is not None else np.zeros_like(p.data))
    return out
