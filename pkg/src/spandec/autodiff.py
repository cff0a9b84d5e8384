"""Reverse-mode automatic differentiation over NumPy arrays.

A small tape-based engine providing exactly the operations the models in
this package need: broadcast arithmetic, matmul, reductions, indexing,
concatenation, and the usual transformer nonlinearities. Everything is
float64 so analytic gradients can be checked against central finite
differences at tight tolerances.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy import special as _special

Array = np.ndarray

_GRAD_ENABLED = True

# Additive attention-mask value for disallowed key positions. Large enough
# that exp(score - max) underflows to exactly 0.0 in float64, small enough
# not to overflow; a fully masked row degrades to a uniform distribution
# instead of NaN.
MASK_VALUE = -1e9


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape`, undoing NumPy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A NumPy array that records the operations producing it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # make ndarray <op> Tensor dispatch to our reflected methods instead of
    # numpy building an object array
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], Sequence[Array | None]] | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            return (
                _unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None,
            )

        return _result(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self

        def backward(g):
            return (-g,)

        return _result(-a.data, (a,), backward)

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            return (
                _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
            )

        return _result(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
            gb = (
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
                if b.requires_grad
                else None
            )
            return ga, gb

        return _result(a.data / b.data, (a, b), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        a = self
        p = float(exponent)

        def backward(g):
            return (g * p * a.data ** (p - 1.0),)

        return _result(a.data**p, (a,), backward)

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def backward(g):
            ga = gb = None
            if a.requires_grad:
                ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
            if b.requires_grad:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
            return ga, gb

        return _result(a.data @ b.data, (a, b), backward)

    def __rmatmul__(self, other) -> "Tensor":
        return as_tensor(other) @ self

    # -- shape manipulation --------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        orig = a.data.shape

        def backward(g):
            return (g.reshape(orig),)

        return _result(a.data.reshape(shape), (a,), backward)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        a = self
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))

        def backward(g):
            return (g.transpose(inverse),)

        return _result(a.data.transpose(axes), (a,), backward)

    def swapaxes(self, ax1: int, ax2: int) -> "Tensor":
        a = self

        def backward(g):
            return (np.swapaxes(g, ax1, ax2),)

        return _result(np.swapaxes(a.data, ax1, ax2), (a,), backward)

    def __getitem__(self, idx) -> "Tensor":
        a = self
        shape = a.data.shape

        def backward(g):
            buf = np.zeros(shape)
            np.add.at(buf, idx, g)
            return (buf,)

        return _result(a.data[idx], (a,), backward)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        shape = a.data.shape

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, shape),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, shape),)

        return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        shape = a.data.shape
        if axis is None:
            count = a.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([shape[ax] for ax in axes]))

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g / count, shape),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg / count, shape),)

        return _result(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)

    # -- autodiff driver -----------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g
            # interior node: release its gradient buffer and tape entry
            node.grad = None
            node._parents = ()
            node._backward = None


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def _result(data: Array, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data, rng: np.random.Generator | None = None) -> Tensor:
    """Wrap an array as a trainable leaf."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


# -- elementwise functions ----------------------------------------------------


def exp(t: Tensor) -> Tensor:
    out_data = np.exp(t.data)

    def backward(g):
        return (g * out_data,)

    return _result(out_data, (t,), backward)


def log(t: Tensor) -> Tensor:
    def backward(g):
        return (g / t.data,)

    return _result(np.log(t.data), (t,), backward)


def sqrt(t: Tensor) -> Tensor:
    out_data = np.sqrt(t.data)

    def backward(g):
        return (g * 0.5 / out_data,)

    return _result(out_data, (t,), backward)


def tanh(t: Tensor) -> Tensor:
    out_data = np.tanh(t.data)

    def backward(g):
        return (g * (1.0 - out_data * out_data),)

    return _result(out_data, (t,), backward)


def erf(t: Tensor) -> Tensor:
    def backward(g):
        return (g * (2.0 / np.sqrt(np.pi)) * np.exp(-t.data * t.data),)

    return _result(_special.erf(t.data), (t,), backward)


def gelu(t: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    inner = _special.erf(t.data / np.sqrt(2.0))

    def backward(g):
        pdf = np.exp(-0.5 * t.data * t.data) / np.sqrt(2.0 * np.pi)
        return (g * (0.5 * (1.0 + inner) + t.data * pdf),)

    return _result(0.5 * t.data * (1.0 + inner), (t,), backward)


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only inside [lo, hi]."""
    inside = (t.data >= lo) & (t.data <= hi)

    def backward(g):
        return (g * inside,)

    return _result(np.clip(t.data, lo, hi), (t,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(
            piece if t.requires_grad else None for piece, t in zip(pieces, tensors)
        )

    return _result(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward
    )


# -- composite neural-net functions -------------------------------------------


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    shifted = t - t.data.max(axis=axis, keepdims=True)
    e = exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    shifted = t - t.data.max(axis=axis, keepdims=True)
    lse = log(exp(shifted).sum(axis=axis, keepdims=True))
    return shifted - lse


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gain + bias


def zero_grads(tensors) -> None:
    values = tensors.values() if isinstance(tensors, dict) else tensors
    for t in values:
        t.grad = None
