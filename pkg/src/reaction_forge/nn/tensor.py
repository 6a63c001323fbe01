"""Reverse-mode autodiff over dense numpy arrays.

Every differentiable op records its parents and a backward closure on the
tensor object itself; calling ``backward()`` on a scalar loss topologically
sorts the recorded tape and accumulates gradients into ``.grad``. The op set
is deliberately small: dense float64 matrix ops, the pointwise nonlinearities
used by the MLPs, and the reductions the losses need. There is no graph
compiler and no implicit broadcasting beyond numpy's own rules (gradients are
summed back to the parent shape).
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from reaction_forge.errors import ContractError, InputShapeError

Array = np.ndarray


def _as_array(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    return a


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    # sum away leading axes numpy added
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node on the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[Array], None] | None = None,
    ):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    # -- construction helpers -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += _unbroadcast(g, self.data.shape)

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.data + other.data, parents=(self, other))
        if out.requires_grad:
            def bwd(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(g)
                if b.requires_grad:
                    b._accumulate(g)
            out._backward = bwd
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data, parents=(self,))
        if out.requires_grad:
            out._backward = lambda g, a=self: a._accumulate(-g)
        return out

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.data * other.data, parents=(self, other))
        if out.requires_grad:
            def bwd(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(g * b.data)
                if b.requires_grad:
                    b._accumulate(g * a.data)
            out._backward = bwd
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = Tensor(self.data / other.data, parents=(self, other))
        if out.requires_grad:
            def bwd(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(g / b.data)
                if b.requires_grad:
                    b._accumulate(-g * a.data / (b.data * b.data))
            out._backward = bwd
        return out

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, p: float) -> "Tensor":
        if not np.isscalar(p):
            raise ContractError("Tensor ** only supports scalar exponents")
        out = Tensor(self.data ** p, parents=(self,))
        if out.requires_grad:
            out._backward = lambda g, a=self, p=p: a._accumulate(g * p * a.data ** (p - 1.0))
        return out

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise InputShapeError(
                f"matmul expects 2-D operands, got {self.data.shape} @ {other.data.shape}"
            )
        out = Tensor(self.data @ other.data, parents=(self, other))
        if out.requires_grad:
            def bwd(g, a=self, b=other):
                if a.requires_grad:
                    a._accumulate(g @ b.data.T)
                if b.requires_grad:
                    b._accumulate(a.data.T @ g)
            out._backward = bwd
        return out

    @property
    def T(self) -> "Tensor":
        out = Tensor(self.data.T, parents=(self,))
        if out.requires_grad:
            out._backward = lambda g, a=self: a._accumulate(g.T)
        return out

    # -- pointwise ------------------------------------------------------------

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        out = Tensor(y, parents=(self,))
        if out.requires_grad:
            out._backward = lambda g, a=self, y=y: a._accumulate(g * (1.0 - y * y))
        return out

    def relu(self) -> "Tensor":
        out = Tensor(np.maximum(self.data, 0.0), parents=(self,))
        if out.requires_grad:
            out._backward = lambda g, a=self: a._accumulate(g * (a.data > 0.0))
        return out

    def exp(self) -> "Tensor":
        y = np.exp(self.data)
        out = Tensor(y, parents=(self,))
        if out.requires_grad:
            out._backward = lambda g, a=self, y=y: a._accumulate(g * y)
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), parents=(self,))
        if out.requires_grad:
            out._backward = lambda g, a=self: a._accumulate(g / a.data)
        return out

    def clip(self, lo: float, hi: float) -> "Tensor":
        """Clamp to [lo, hi]; gradient passes only through the interior."""
        out = Tensor(np.clip(self.data, lo, hi), parents=(self,))
        if out.requires_grad:
            inside = (self.data > lo) & (self.data < hi)
            out._backward = lambda g, a=self, m=inside: a._accumulate(g * m)
        return out

    # -- reductions -----------------------------------------------------------

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))
        if out.requires_grad:
            def bwd(g, a=self, axis=axis, keepdims=keepdims):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            out._backward = bwd
        return out

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- backward -------------------------------------------------------------

    def backward(self) -> None:
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data: Array) -> Tensor:
    """Wrap an array as a leaf that wants gradients. Shares the array's memory."""
    t = Tensor(np.asarray(data, dtype=np.float64))
    t.requires_grad = True
    return t


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis), parents=tuple(ts))
    if out.requires_grad:
        sizes = [t.data.shape[axis] for t in ts]
        splits = np.cumsum(sizes)[:-1]
        def bwd(g, ts=ts, splits=splits, axis=axis):
            for t, piece in zip(ts, np.split(g, splits, axis=axis)):
                if t.requires_grad:
                    t._accumulate(piece)
        out._backward = bwd
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; at ties the gradient routes to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data), parents=(a, b))
    if out.requires_grad:
        def bwd(g, a=a, b=b, m=take_a):
            if a.requires_grad:
                a._accumulate(g * m)
            if b.requires_grad:
                b._accumulate(g * ~m)
        out._backward = bwd
    return out


def where_const(mask: Array, a: Tensor, b: Tensor) -> Tensor:
    """Select by a constant boolean mask."""
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(np.where(mask, a.data, b.data), parents=(a, b))
    if out.requires_grad:
        def bwd(g, a=a, b=b, m=mask):
            if a.requires_grad:
                a._accumulate(g * m)
            if b.requires_grad:
                b._accumulate(g * ~m)
        out._backward = bwd
    return out


def normalize_rows(z: Tensor, eps: float = 1e-12) -> Tensor:
    """L2-normalize each row. ``eps`` only guards the exact-zero row."""
    sq = (z * z).sum(axis=-1, keepdims=True)
    norm = (sq + eps * eps) ** 0.5
    return z / norm
