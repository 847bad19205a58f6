"""A small reverse-mode automatic differentiation core on top of numpy."""

from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import expit

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An array node in a dynamically built computation graph.

    ``backward_fn`` receives the output gradient and returns one gradient
    (or ``None``) per parent, in order.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None,
                 op=""):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate gradients of this tensor into every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar")
            grad = np.ones_like(self.data)
        order, seen = [], set()

        def visit(node):
            stack = [(node, False)]
            while stack:
                n, done = stack.pop()
                if done:
                    order.append(n)
                    continue
                if id(n) in seen:
                    continue
                seen.add(id(n))
                stack.append((n, True))
                for p in n.parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic -------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        return mul(self, power(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def transpose(self, *axes):
        return transpose(self, axes[0] if len(axes) == 1 else axes)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return tsum(self) * (1.0 / self.data.size)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data, name=""):
        super().__init__(np.array(data), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap ``x``; float arrays keep their dtype, anything else becomes float64."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make(data, parents, backward_fn, op) -> Tensor:
    """Create an op output, recording the graph only when needed."""
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data, op=op)
    return Tensor(data, True, parents, backward_fn, op)


def _cast(x, like):
    x = as_tensor(x)
    if x.dtype != like.dtype and not x.requires_grad:
        x = Tensor(x.data.astype(like.dtype))
    return x


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = _cast(b, a)
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = _cast(b, a)
    return make(a.data * b.data, (a, b),
                lambda g: (_unbroadcast(g * b.data, a.shape),
                           _unbroadcast(g * a.data, b.shape)), "mul")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** exponent
    return make(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1.0),), "pow")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return make(a.data @ b.data, (a, b), backward, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                lambda g: (g.transpose(inv),), "transpose")


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make(np.asarray(a.data.sum(axis=axis)), (a,), backward, "sum")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")
