"""Minimal reverse-mode automatic differentiation over numpy float64 arrays.

Every operation records a backward closure on the result node; backward()
topologically sorts the graph reachable from the loss and replays the
closures in reverse. Only nodes downstream of a requires_grad leaf get
closures, so constant subgraphs cost nothing extra.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteGradient

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to shape (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    def vjp(g):
        a._accumulate(-g)

    return _node(-a.data, (a,), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(data, (a, b), vjp)


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        a._accumulate(g * s * (1.0 - s))

    return _node(s, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def vjp(g):
        a._accumulate(g * (1.0 - t * t))

    return _node(t, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def vjp(g):
        a._accumulate(g * e)

    return _node(e, (a,), vjp)


def log(a: Tensor) -> Tensor:
    def vjp(g):
        a._accumulate(g / a.data)

    return _node(np.log(a.data), (a,), vjp)


def square(a: Tensor) -> Tensor:
    def vjp(g):
        a._accumulate(g * 2.0 * a.data)

    return _node(a.data * a.data, (a,), vjp)


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    data = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _node(data, (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _node(data, tuple(tensors), vjp)


def rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup table[idx] (embedding gather); grads scatter-add back."""
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, idx, g)
        table._accumulate(acc)

    return _node(table.data[idx], (table,), vjp)


def gather(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick a[i, idx[i]] for each row i of a 2-D tensor."""
    idx = np.asarray(idx, dtype=np.int64)
    rng = np.arange(a.data.shape[0])

    def vjp(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, (rng, idx), g)
        a._accumulate(acc)

    return _node(a.data[rng, idx], (a,), vjp)


def log_softmax(a: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """Row-wise log softmax over the last axis.

    additive_mask (broadcastable, typically 0 for legal entries and a large
    negative number for illegal ones) is treated as a constant; masked
    entries end up with probability exactly representable as exp(out) ~ 0.
    """
    x = a.data if additive_mask is None else a.data + additive_mask
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def vjp(g):
        a._accumulate(g - p * g.sum(axis=-1, keepdims=True))

    return _node(out, (a,), vjp)


def backward(loss: Tensor) -> None:
    """Accumulate d loss / d leaf into .grad for every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._vjp is not None:
            node._vjp(node.grad)


def zero_grads(params: Iterable[tuple[str, Tensor]]) -> None:
    for _, p in params:
        p.grad = None


def check_finite_grads(params: Iterable[tuple[str, Tensor]]) -> None:
    for name, p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(f"non-finite gradient in parameter group '{name}'")


class Adam:
    """Adam with bias correction; state keyed by parameter identity."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def step(self, params: Sequence[tuple[str, Tensor]]) -> None:
        check_finite_grads(params)
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, p in params:
            g = p.grad
            if g is None:
                continue
            key = id(p)
            if key not in self._m:
                self._m[key] = np.zeros_like(p.data)
                self._v[key] = np.zeros_like(p.data)
            m = self._m[key]
            v = self._v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


class Sgd:
    """Plain SGD (Algorithm-level baseline optimizer)."""

    def __init__(self, lr: float = 1e-2):
        self.lr = lr

    def step(self, params: Sequence[tuple[str, Tensor]]) -> None:
        check_finite_grads(params)
        for _, p in params:
            if p.grad is not None:
                p.data -= self.lr * p.grad
