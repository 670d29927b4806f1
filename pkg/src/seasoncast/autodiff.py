"""Minimal reverse-mode differentiation over numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to one gradient per parent. Only
tensors that (transitively) depend on a ``requires_grad`` leaf are
recorded; everything else is a constant.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NonScalarLoss


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.value = np.asarray(value, dtype=float)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.parents: Tuple["Tensor", ...] = parents
        self.backward_fn: Optional[Callable] = backward_fn
        self.name = name

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def parameter(value, name=None) -> Tensor:
    return Tensor(np.array(value, dtype=float), requires_grad=True, name=name)


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) and not value.requires_grad else Tensor(value)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that disables recording (inference mode)."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev


def _record(value, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if _GRAD_ENABLED[0] and any(p.requires_grad for p in parents):
        return Tensor(value, True, tuple(parents), backward_fn)
    return Tensor(value)


def unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise --------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _record(
        a.value + b.value,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _record(
        a.value - b.value,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _record(
        a.value * b.value,
        (a, b),
        lambda g: (unbroadcast(g * b.value, a.shape), unbroadcast(g * a.value, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _record(
        a.value / b.value,
        (a, b),
        lambda g: (
            unbroadcast(g / b.value, a.shape),
            unbroadcast(-g * a.value / b.value**2, b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = _lift(a)
    return _record(-a.value, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = _lift(a)
    return _record(
        a.value**exponent,
        (a,),
        lambda g: (g * exponent * a.value ** (exponent - 1),),
    )


def square(a) -> Tensor:
    a = _lift(a)
    return _record(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.value)
    return _record(out, (a,), lambda g: (g * out,))


def relu(a) -> Tensor:
    a = _lift(a)
    mask = a.value > 0
    return _record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = _lift(a)
    out = 0.5 * (np.tanh(0.5 * a.value) + 1.0)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.value)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


# -- linear algebra / reductions ----------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    return _record(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def tsum(a, axis=None) -> Tensor:
    a = _lift(a)

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(a.value.sum(axis=axis), (a,), back)


def mean(a, axis=None) -> Tensor:
    a = _lift(a)
    count = a.value.size if axis is None else a.value.shape[axis]

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _record(a.value.mean(axis=axis), (a,), back)


# -- shape ops ----------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    return _record(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, index) -> Tensor:
    a = _lift(a)
    parts = index if isinstance(index, tuple) else (index,)
    # basic indexing never repeats an element, so assignment is enough
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in parts)

    def back(g):
        out = np.zeros_like(a.value)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _record(a.value[index], (a,), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return _record(
        np.concatenate([t.value for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _record(np.stack([t.value for t in tensors], axis=axis), tensors, back)


def mse_loss(pred, target) -> Tensor:
    diff = sub(pred, constant(np.asarray(target, dtype=float).reshape(_lift(pred).shape)))
    return mean(square(diff))


# -- tape ---------------------------------------------------------------------------


class Tape:
    """The recorded graph behind ``output`` in topological order (inputs first)."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: List[Tensor] = self._toposort(output)

    @staticmethod
    def _toposort(root: Tensor) -> List[Tensor]:
        order, seen = [], set()
        stack = [(root, False)]
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

    def leaves(self) -> List[Tensor]:
        return [n for n in self.nodes if n.backward_fn is None and n.requires_grad]


def backward(loss, wrt: Optional[Iterable[Tensor]] = None) -> Dict[Tensor, np.ndarray]:
    """Reverse sweep from a scalar ``loss`` (a Tensor or a :class:`Tape`).

    Returns ``{leaf: gradient}`` for every ``requires_grad`` leaf reached (or
    for ``wrt`` when given, with zeros for tensors the loss does not depend
    on). Leaf ``.grad`` attributes are overwritten.
    """
    tape = loss if isinstance(loss, Tape) else Tape(loss)
    out = tape.output
    if out.value.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {out.value.shape}")
    grads: Dict[int, np.ndarray] = {id(out): np.ones_like(out.value)}
    result: Dict[Tensor, np.ndarray] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            result[node] = g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if wrt is not None:
        result = {t: result.get(t, np.zeros_like(t.value)) for t in wrt}
    for t, g in result.items():
        t.grad = g
    return result


def numeric_gradient(fn: Callable[[], float], param: Tensor, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of ``fn()`` with respect to ``param.value`` (in place)."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn()
        flat[i] = orig - eps
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad
