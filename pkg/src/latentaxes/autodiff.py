"""A small reverse-mode differentiation engine over numpy arrays.

Each :class:`Tensor` remembers the tensors it was computed from and a
closure mapping its output gradient to theirs.  ``backward`` walks the graph
in reverse topological order.  Graphs are built per call and never shared.
"""
from __future__ import annotations

import numpy as np

from .errors import ValidationError


class NonFiniteError(ValidationError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100

    def __init__(self, value, parents=(), op="const", requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents  # sequence of (Tensor, grad_fn)
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in parents)
        self.grad = None
        if parents and not np.all(np.isfinite(self.value)):
            raise NonFiniteError(f"non-finite value produced by '{op}' (shape {self.value.shape})")

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape})"

    # graph traversal

    def backward(self, seed=None):
        order, seen = [], set()

        def visit(t):
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen or not node.requires_grad:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for parent, _ in node.parents:
                    stack.append((parent, False))

        visit(self)
        grads = {id(self): np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, fn in node.parents:
                if not parent.requires_grad:
                    continue
                pg = fn(g)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic

    def __add__(self, other):
        other = lift(other)
        return Tensor(self.value + other.value,
                      ((self, lambda g: _unbroadcast(g, self.shape)),
                       (other, lambda g: _unbroadcast(g, other.shape))), "add")

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.value, ((self, lambda g: -g),), "neg")

    def __sub__(self, other):
        other = lift(other)
        return Tensor(self.value - other.value,
                      ((self, lambda g: _unbroadcast(g, self.shape)),
                       (other, lambda g: -_unbroadcast(g, other.shape))), "sub")

    def __rsub__(self, other):
        return lift(other) - self

    def __mul__(self, other):
        other = lift(other)
        a, b = self.value, other.value
        return Tensor(a * b,
                      ((self, lambda g: _unbroadcast(g * b, a.shape)),
                       (other, lambda g: _unbroadcast(g * a, b.shape))), "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = lift(other)
        a, b = self.value, other.value
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a / b
        return Tensor(out,
                      ((self, lambda g: _unbroadcast(g / b, a.shape)),
                       (other, lambda g: _unbroadcast(-g * out / b, b.shape))), "div")

    def __rtruediv__(self, other):
        return lift(other) / self

    def __pow__(self, exponent):
        # exponent is a constant (scalar or array)
        e = np.asarray(exponent, dtype=np.float64)
        a = self.value
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = a ** e
        return Tensor(out, ((self, lambda g: _unbroadcast(g * e * a ** (e - 1), a.shape)),), "pow")

    def __matmul__(self, other):
        other = lift(other)
        a, b = self.value, other.value
        return Tensor(a @ b,
                      ((self, lambda g: _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)),
                       (other, lambda g: _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape))),
                      "matmul")

    def __rmatmul__(self, other):
        return lift(other) @ self

    # reductions and reshaping

    def sum(self, axis=None):
        shape = self.shape
        out = self.value.sum(axis=axis)

        def fn(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape).copy()

        return Tensor(out, ((self, fn),), "sum")

    def mean(self, axis=None):
        count = self.value.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis) * (1.0 / count)

    def reshape(self, *shape):
        old = self.shape
        return Tensor(self.value.reshape(*shape), ((self, lambda g: g.reshape(old)),), "reshape")

    def transpose(self, *axes):
        inv = np.argsort(axes)
        return Tensor(self.value.transpose(axes), ((self, lambda g: g.transpose(inv)),), "transpose")

    def __getitem__(self, idx):
        shape = self.shape

        def fn(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return out

        return Tensor(self.value[idx], ((self, fn),), "index")


def lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def variable(x) -> Tensor:
    return Tensor(x, requires_grad=True)


# elementwise functions

def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.value)
    return Tensor(out, ((x, lambda g: g * (1.0 - out * out)),), "tanh")


def log(x: Tensor) -> Tensor:
    a = x.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a)
    return Tensor(out, ((x, lambda g: g / a),), "log")


def sqrt(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.value)
    return Tensor(out, ((x, lambda g: g * 0.5 / out),), "sqrt")


def abs(x: Tensor) -> Tensor:  # noqa: A001
    a = x.value
    return Tensor(np.abs(a), ((x, lambda g: g * np.sign(a)),), "abs")


def log_cosh(x: Tensor) -> Tensor:
    a = x.value
    t = np.abs(a)
    # cosh overflows past ~710; there log(cosh(a)) = |a| - log 2 to double precision
    out = np.where(t < 20.0, np.log(np.cosh(np.minimum(t, 20.0))), t - np.log(2.0))
    return Tensor(out, ((x, lambda g: g * np.tanh(a)),), "log_cosh")


def relu(x: Tensor) -> Tensor:
    a = x.value
    mask = a > 0
    return Tensor(np.where(mask, a, 0.0), ((x, lambda g: g * mask),), "relu")


def conv2d(x: Tensor, weight: np.ndarray, stride: int = 1) -> Tensor:
    """Valid cross-correlation of ``x`` (N, C, H, W) with a constant kernel (O, C, kh, kw)."""
    xv = x.value
    n, c, h, w = xv.shape
    o, c2, kh, kw = weight.shape
    if c != c2:
        raise ValidationError(f"conv input has {c} channels, kernel expects {c2}")
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    if h < kh or w < kw or ho < 1 or wo < 1:
        raise ValidationError(f"input {h}x{w} too small for {kh}x{kw} kernel")
    # im2col: cols[n, c, i, j] holds the input pixels that kernel tap (i, j) sees
    cols = np.empty((n, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xv[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    wmat = weight.reshape(o, c * kh * kw)
    out = (wmat @ cols.reshape(n, c * kh * kw, ho * wo)).reshape(n, o, ho, wo)

    def fn(g):
        dcols = (wmat.T @ g.reshape(n, o, ho * wo)).reshape(n, c, kh, kw, ho, wo)
        dx = np.zeros_like(xv)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
        return dx

    return Tensor(out, ((x, fn),), "conv2d")


def pos_pow(x: Tensor, exponent: float) -> Tensor:
    """``max(x, 0) ** exponent`` with zero gradient wherever ``x <= 0``."""
    a = x.value
    mask = a > 0
    base = np.where(mask, a, 1.0)
    out = np.where(mask, base ** exponent, 0.0)
    return Tensor(out, ((x, lambda g: np.where(mask, g * exponent * base ** (exponent - 1), 0.0)),),
                  "pos_pow")
