"""A small tape-based reverse-mode autodiff engine over numpy arrays.

Every op records its parents and a closure that pushes the output gradient
back to them. ``Tensor.backward`` walks the graph in reverse topological
order. Only what the generator/critic networks need is implemented.
"""
from __future__ import annotations

import itertools

import numpy as np

_node_ids = itertools.count()


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A float64 array that remembers how it was computed.

    ``grad`` is only populated on leaves created with ``requires_grad=True``
    after ``backward`` has run; intermediate gradients are discarded.
    """

    __slots__ = ("data", "grad", "requires_grad", "node_id", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self.op = op
        self._parents = _parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- graph construction -------------------------------------------------

    def _child(self, data, parents, op, backward):
        needs = any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), op=op)
        if needs:
            out._backward = backward
        return out

    # -- elementwise ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return self._child(a.data + b.data, (a, b), "add", backward)

    __radd__ = __add__

    def __neg__(self):
        return self._child(-self.data, (self,), "neg", lambda g: (-g,))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
            gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
            return ga, gb

        return self._child(a.data * b.data, (a, b), "mul", backward)

    __rmul__ = __mul__

    def __pow__(self, exponent: float):
        a = self
        if exponent == 2:
            return self._child(a.data * a.data, (a,), "square", lambda g: (2.0 * a.data * g,))
        return self._child(
            a.data**exponent,
            (a,),
            f"pow{exponent}",
            lambda g: (exponent * a.data ** (exponent - 1) * g,),
        )

    def square(self):
        return self**2

    def relu(self):
        mask = self.data > 0
        return self._child(self.data * mask, (self,), "relu", lambda g: (g * mask,))

    def leaky_relu(self, slope: float = 0.2):
        scale = np.where(self.data > 0, 1.0, slope)
        return self._child(self.data * scale, (self,), "leaky_relu", lambda g: (g * scale,))

    # -- linear algebra / reductions ---------------------------------------------

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            ga = g @ b.data.T if a.requires_grad else None
            gb = a.data.T @ g if b.requires_grad else None
            return ga, gb

        return self._child(a.data @ b.data, (a, b), "matmul", backward)

    def sum(self):
        shape = self.shape
        return self._child(
            np.asarray(self.data.sum()), (self,), "sum", lambda g: (np.broadcast_to(g, shape).copy(),)
        )

    def mean(self):
        n = self.size
        shape = self.shape
        return self._child(
            np.asarray(self.data.mean()),
            (self,),
            "mean",
            lambda g: (np.broadcast_to(g / n, shape).copy(),),
        )

    # -- backward pass -------------------------------------------------------

    def backward(self):
        """Populate ``.grad`` on every leaf reachable from this scalar."""
        if self.size != 1:
            raise ValueError(f"backward() needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            return

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and parent.node_id not in seen:
                    stack.append((parent, False))

        grads = {self.node_id: np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.node_id in grads:
                    grads[parent.node_id] = grads[parent.node_id] + pg
                else:
                    grads[parent.node_id] = pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
