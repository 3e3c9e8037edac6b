"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation returns a new Tensor that remembers its inputs and a
closure propagating gradients to them.  ``backward()`` on a scalar walks
the recorded graph once in reverse topological order, accumulates
gradients into every node that wants them, and frees the graph.  The
engine is single-threaded per graph and deterministic: the same inputs
always produce bit-identical forward and backward results.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / FD probes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    """An operand shape violates the operation's contract."""


def _as_array(value) -> np.ndarray:
    if isinstance(value, np.ndarray) and value.dtype == DEFAULT_DTYPE:
        return value
    return np.asarray(value, dtype=DEFAULT_DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalize_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for {ndim}-d tensor")
        out.append(a % ndim)
    return tuple(sorted(out))


class Tensor:
    """n-dimensional float64 array, optionally participating in gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None
        self._op = "leaf"

    # -- introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, op={self._op!r}{flag})"

    # -- graph machinery ----------------------------------------------

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar; frees the graph afterwards."""
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        if not self._prev:
            raise ValueError(
                "backward() called on a tensor that was not produced by "
                "recorded operations"
            )
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()
        for node in order:
            node._backward = None
            node._prev = ()

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        a, b = self, lift(other)
        out = _from_op(a.data + b.data, (a, b), "add")
        if out.requires_grad:
            def backward():
                g = out.grad
                _accum(a, _unbroadcast(g, a.data.shape))
                _accum(b, _unbroadcast(g, b.data.shape))
            out._backward = backward
        return out

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, lift(other)
        out = _from_op(a.data - b.data, (a, b), "sub")
        if out.requires_grad:
            def backward():
                g = out.grad
                _accum(a, _unbroadcast(g, a.data.shape))
                _accum(b, _unbroadcast(-g, b.data.shape))
            out._backward = backward
        return out

    def __rsub__(self, other):
        return lift(other).__sub__(self)

    def __neg__(self):
        a = self
        out = _from_op(-a.data, (a,), "neg")
        if out.requires_grad:
            out._backward = lambda: _accum_owned(a, -out.grad)
        return out

    def __mul__(self, other):
        a, b = self, lift(other)
        out = _from_op(a.data * b.data, (a, b), "mul")
        if out.requires_grad:
            def backward():
                g = out.grad
                _accum_owned(a, _unbroadcast(g * b.data, a.data.shape))
                _accum_owned(b, _unbroadcast(g * a.data, b.data.shape))
            out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, lift(other)
        out = _from_op(a.data / b.data, (a, b), "div")
        if out.requires_grad:
            def backward():
                g = out.grad
                _accum_owned(a, _unbroadcast(g / b.data, a.data.shape))
                _accum_owned(b, _unbroadcast(-g * out.data / b.data, b.data.shape))
            out._backward = backward
        return out

    def __rtruediv__(self, other):
        return lift(other).__truediv__(self)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self
        out = _from_op(a.data ** exponent, (a,), "pow")
        if out.requires_grad:
            def backward():
                _accum_owned(a, out.grad * exponent * a.data ** (exponent - 1))
            out._backward = backward
        return out

    def __matmul__(self, other):
        a, b = self, lift(other)
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ShapeError("matmul requires operands with at least 2 dimensions")
        if a.data.shape[-1] != b.data.shape[-2]:
            raise ShapeError(
                f"matmul: inner dimensions differ "
                f"({a.data.shape[-1]} vs {b.data.shape[-2]})"
            )
        out = _from_op(np.matmul(a.data, b.data), (a, b), "matmul")
        if out.requires_grad:
            def backward():
                g = out.grad
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                _accum_owned(a, _unbroadcast(ga, a.data.shape))
                _accum_owned(b, _unbroadcast(gb, b.data.shape))
            out._backward = backward
        return out

    # -- elementwise functions ------------------------------------------

    def exp(self):
        a = self
        out = _from_op(np.exp(a.data), (a,), "exp")
        if out.requires_grad:
            out._backward = lambda: _accum_owned(a, out.grad * out.data)
        return out

    def log(self):
        a = self
        out = _from_op(np.log(a.data), (a,), "log")
        if out.requires_grad:
            out._backward = lambda: _accum_owned(a, out.grad / a.data)
        return out

    def sqrt(self):
        a = self
        out = _from_op(np.sqrt(a.data), (a,), "sqrt")
        if out.requires_grad:
            out._backward = lambda: _accum_owned(a, out.grad * 0.5 / out.data)
        return out

    def tanh(self):
        a = self
        out = _from_op(np.tanh(a.data), (a,), "tanh")
        if out.requires_grad:
            out._backward = lambda: _accum_owned(a, out.grad * (1.0 - out.data ** 2))
        return out

    def sigmoid(self):
        a = self
        data = 1.0 / (1.0 + np.exp(-a.data))
        out = _from_op(data, (a,), "sigmoid")
        if out.requires_grad:
            out._backward = lambda: _accum_owned(a, out.grad * out.data * (1.0 - out.data))
        return out

    def relu(self):
        a = self
        out = _from_op(np.maximum(a.data, 0.0), (a,), "relu")
        if out.requires_grad:
            out._backward = lambda: _accum_owned(a, out.grad * (a.data > 0.0))
        return out

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        axes = _normalize_axes(axis, a.data.ndim)
        out = _from_op(a.data.sum(axis=axes or None, keepdims=keepdims), (a,), "sum")
        if out.requires_grad:
            def backward():
                g = out.grad
                if not keepdims and axes:
                    g = np.expand_dims(g, axes)
                _accum_owned(a, np.broadcast_to(g, a.data.shape).copy())
            out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        a = self
        axes = _normalize_axes(axis, a.data.ndim)
        count = int(np.prod([a.data.shape[i] for i in axes])) if axes else a.data.size
        out = _from_op(a.data.mean(axis=axes or None, keepdims=keepdims), (a,), "mean")
        if out.requires_grad:
            def backward():
                g = out.grad / count
                if not keepdims and axes:
                    g = np.expand_dims(g, axes)
                _accum_owned(a, np.broadcast_to(g, a.data.shape).copy())
            out._backward = backward
        return out

    def max(self, axis: int, keepdims: bool = False):
        """Maximum over one axis; ties route the gradient to the first hit."""
        a = self
        (ax,) = _normalize_axes(axis, a.data.ndim)
        idx = np.argmax(a.data, axis=ax)
        idx_keep = np.expand_dims(idx, ax)
        data = np.take_along_axis(a.data, idx_keep, axis=ax)
        if not keepdims:
            data = np.squeeze(data, axis=ax)
        out = _from_op(data, (a,), "max")
        if out.requires_grad:
            def backward():
                g = out.grad
                if not keepdims:
                    g = np.expand_dims(g, ax)
                buf = np.zeros_like(a.data)
                np.put_along_axis(buf, idx_keep, g, axis=ax)
                _accum_owned(a, buf)
            out._backward = backward
        return out

    # -- shape manipulation ------------------------------------------------

    def reshape(self, shape):
        a = self
        out = _from_op(a.data.reshape(shape), (a,), "reshape")
        if out.requires_grad:
            out._backward = lambda: _accum(a, out.grad.reshape(a.data.shape))
        return out

    def transpose(self, axes: Sequence[int]):
        a = self
        axes = tuple(axes)
        out = _from_op(np.transpose(a.data, axes), (a,), "transpose")
        if out.requires_grad:
            inverse = tuple(np.argsort(axes))
            out._backward = lambda: _accum(a, np.transpose(out.grad, inverse))
        return out

    def __getitem__(self, index):
        a = self
        out = _from_op(a.data[index], (a,), "index")
        if out.requires_grad:
            def backward():
                if not a.requires_grad:
                    return
                if a.grad is None:
                    a.grad = np.zeros_like(a.data)
                a.grad[index] += out.grad
            out._backward = backward
        return out


def lift(value) -> Tensor:
    """Wrap scalars/arrays as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _from_op(data: np.ndarray, parents: tuple[Tensor, ...], op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data if isinstance(data, np.ndarray) else _as_array(data)
    out.grad = None
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents
    else:
        out.requires_grad = False
        out._prev = ()
    out._backward = None
    return out


def _accum(t: Tensor, grad: np.ndarray) -> None:
    """Accumulate a gradient the caller may still alias (copies on first use)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(grad)
    else:
        t.grad += grad


def _accum_owned(t: Tensor, grad: np.ndarray) -> None:
    """Accumulate a freshly allocated gradient; adopts it without copying."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = grad
    else:
        t.grad += grad


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative post-order walk; every reachable node appears exactly once."""
    order: list[Tensor] = []
    visited: set[Tensor] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node in visited:
            continue
        visited.add(node)
        stack.append((node, True))
        for parent in node._prev:
            if parent not in visited:
                stack.append((parent, False))
    return order


def cat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; gradients split back by section."""
    parts = [lift(t) for t in tensors]
    if not parts:
        raise ValueError("cat() needs at least one tensor")
    ndim = parts[0].data.ndim
    (ax,) = _normalize_axes(axis, ndim)
    out = _from_op(np.concatenate([p.data for p in parts], axis=ax), tuple(parts), "cat")
    if out.requires_grad:
        sizes = [p.data.shape[ax] for p in parts]
        def backward():
            g = out.grad
            offset = 0
            for p, size in zip(parts, sizes):
                sl = [slice(None)] * ndim
                sl[ax] = slice(offset, offset + size)
                _accum(p, g[tuple(sl)])
                offset += size
        out._backward = backward
    return out


def split(tensor: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    """Split into ``sections`` equal parts along ``axis``."""
    a = lift(tensor)
    (ax,) = _normalize_axes(axis, a.data.ndim)
    total = a.data.shape[ax]
    if total % sections != 0:
        raise ShapeError(
            f"split: axis {ax} of size {total} is not divisible into "
            f"{sections} equal parts"
        )
    width = total // sections
    outs = []
    for k in range(sections):
        sl = [slice(None)] * a.data.ndim
        sl[ax] = slice(k * width, (k + 1) * width)
        outs.append(a[tuple(sl)])
    return outs
