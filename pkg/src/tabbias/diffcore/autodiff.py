"""Reverse-mode automatic differentiation over numpy arrays.

Every backward rule is itself written with :class:`Tensor` operations, so
gradients can be differentiated again (``grad(..., create_graph=True)``).
That is what second-order MAML needs; everything else runs with graph
recording switched off inside the backward pass.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def set_grad_enabled(mode: bool):
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = mode
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def no_grad():
    return set_grad_enabled(False)


class Tensor:
    """A float64 array that remembers how it was computed."""

    __slots__ = ("data", "parents", "backward_fn", "requires_grad")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        i + extra for i, n in enumerate(shape) if n == 1 and g.shape[i + extra] != 1
    )
    out = sum_(g, axes, keepdims=True) if axes else g
    return reshape(out, shape)


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (neg(g),))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)

    return _node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = div(g, b)
        gb = neg(div(mul(ga, a), b))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.data / b.data, (a, b), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = _node(np.exp(a.data), (a,), lambda g: (mul(g, out),))
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (div(g, a),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = _node(np.tanh(a.data), (a,), lambda g: (mul(g, 1.0 - mul(out, out)),))
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _node(_sigmoid(a.data), (a,), lambda g: (mul(g, mul(out, 1.0 - out)),))
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    return _node(a.data * mask, (a,), lambda g: (mul(g, mask),))


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed without overflow."""
    a = as_tensor(a)
    return _node(np.logaddexp(0.0, a.data), (a,), lambda g: (mul(g, sigmoid(a)),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- reductions and shape ---------------------------------------------------


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(ax % len(shape) for ax in axes)
            kept = list(g.shape)
            for ax in sorted(axes):
                kept.insert(ax, 1)
            g = reshape(g, tuple(kept))
        elif axis is None and not keepdims:
            g = reshape(g, (1,) * len(shape))
        return (broadcast_to(g, shape),)

    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis, keepdims), 1.0 / count)


def broadcast_to(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _node(
        np.broadcast_to(a.data, shape), (a,), lambda g: (_unbroadcast(g, src),)
    )


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (reshape(g, src),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.T, (a,), lambda g: (transpose(g),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _node(a.data @ b.data, (a, b), backward)


def index(a, key) -> Tensor:
    """Basic (slice) indexing; the gradient scatters back into zeros."""
    a = as_tensor(a)
    shape = a.shape
    return _node(a.data[key], (a,), lambda g: (_scatter(g, shape, key),))


def _scatter(g: Tensor, shape: tuple[int, ...], key) -> Tensor:
    out = np.zeros(shape)
    out[key] = g.data
    return _node(out, (g,), lambda gg: (index(gg, key),))


def logsumexp(a, axis: int = -1) -> Tensor:
    """log-sum-exp along ``axis`` with the axis kept."""
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    value = m + np.log(np.sum(np.exp(a.data - m), axis=axis, keepdims=True))

    def backward(g):
        return (mul(broadcast_to(g, a.shape), exp(a - out)),)

    out = _node(value, (a,), backward)
    return out


# -- gradients ---------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad(
    output: Tensor, inputs: Iterable[Tensor], create_graph: bool = False
) -> list[Tensor]:
    """Gradients of scalar ``output`` with respect to each of ``inputs``.

    Inputs that ``output`` does not depend on get zero gradients. With
    ``create_graph`` the returned tensors are themselves differentiable.
    """
    inputs = list(inputs)
    if output.data.size != 1:
        raise ValueError("grad needs a scalar output")
    wanted = {id(x) for x in inputs}
    result: dict[int, Tensor] = {}
    if output.requires_grad:
        pending: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.data))}
        with set_grad_enabled(create_graph):
            for node in reversed(_topological(output)):
                g = pending.pop(id(node), None)
                if g is None:
                    continue
                if id(node) in wanted:
                    result[id(node)] = g
                if node.backward_fn is None:
                    continue
                for parent, pg in zip(node.parents, node.backward_fn(g)):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    pending[key] = pg if key not in pending else add(pending[key], pg)
    return [result.get(id(x), Tensor(np.zeros_like(x.data))) for x in inputs]
