"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every op builds its output eagerly and, when any input requires gradients,
links the output to its inputs together with a closure that maps the output
gradient to input gradients. ``backward`` replays that graph in reverse
topological order.
"""
from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

from gator.errors import ContractError, DomainError

LAYER_NORM_EPS = 1e-5

_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording the graph (inference only)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(values: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.name = None
    out.requires_grad = _grad_enabled.get() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.values + b.values, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.values - b.values, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.values, b.values

    def backward(g):
        return (_unbroadcast(g * bv, av.shape) if a.requires_grad else None,
                _unbroadcast(g * av, bv.shape) if b.requires_grad else None)

    return _result(av * bv, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    av, bv = a.values, b.values
    out = av / bv

    def backward(g):
        return (_unbroadcast(g / bv, av.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bv, bv.shape) if b.requires_grad else None)

    return _result(out, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(x.values * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    return _result(np.where(mask, x.values, 0.0), (x,), lambda g: (g * mask,))


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.values)
    return _result(np.abs(x.values), (x,), lambda g: (g * sign,))


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.values < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(x.values)
    return _result(out, (x,), lambda g: (g * 0.5 / out,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.values)
    return _result(out, (x,), lambda g: (g * out,))


def softplus(x: Tensor) -> Tensor:
    v = x.values
    sig = 0.5 * (1.0 + np.tanh(0.5 * v))
    return _result(np.logaddexp(0.0, v), (x,), lambda g: (g * sig,))


def square(x: Tensor) -> Tensor:
    v = x.values
    return _result(v * v, (x,), lambda g: (2.0 * g * v,))


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
    out = x.values.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        return (np.broadcast_to(g.reshape(kept), shape).copy(),)

    return _result(np.asarray(out, dtype=np.float64).reshape(out.shape or (1,)), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes]))
    if count == 0:
        raise DomainError("mean over an empty axis")
    return scale(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ContractError(f"matmul batch dims differ: {a.shape} @ {b.shape}") from None
    av, bv = a.values, b.values

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape) if b.requires_grad else None
        return ga, gb

    return _result(av @ bv, (a, b), backward)


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum without ellipsis or repeated indices per operand."""
    a, b = as_tensor(a), as_tensor(b)
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for s, t in ((sa, a), (sb, b)):
        if len(set(s)) != len(s) or len(s) != t.ndim:
            raise ContractError(f"einsum operand {s!r} does not fit shape {t.shape}")
    if not set(sa) <= set(sb) | set(out_sub) or not set(sb) <= set(sa) | set(out_sub):
        raise ContractError(f"einsum {subscripts!r}: contracted index missing from partner")
    try:
        out = np.einsum(f"{sa},{sb}->{out_sub}", a.values, b.values)
    except ValueError as exc:
        raise ContractError(f"einsum {subscripts!r}: {exc}") from None
    av, bv = a.values, b.values

    def backward(g):
        ga = np.einsum(f"{out_sub},{sb}->{sa}", g, bv) if a.requires_grad else None
        gb = np.einsum(f"{out_sub},{sa}->{sb}", g, av) if b.requires_grad else None
        return ga, gb

    return _result(np.asarray(out, dtype=np.float64), (a, b), backward)


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.values.reshape(shape)
    except ValueError:
        raise ContractError(f"cannot reshape {x.shape} to {shape}") from None
    orig = x.shape
    return _result(out, (x,), lambda g: (g.reshape(orig),))


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ContractError(f"bad transpose axes {axes} for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return _result(x.values.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(x.values, shape).copy()
    except ValueError:
        raise ContractError(f"cannot broadcast {x.shape} to {shape}") from None
    orig = x.shape
    return _result(out, (x,), lambda g: (_unbroadcast(g, orig),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of nothing")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise ContractError(f"concat shapes disagree off axis {axis}: "
                                f"{[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.values for t in tensors], axis=ax)
    return _result(out, tensors, lambda g: tuple(np.split(g, splits, axis=ax)))


def gather(x: Tensor, index, axis: int = 0) -> Tensor:
    """Select slices of ``x`` along ``axis`` by integer index (embedding lookup)."""
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ContractError("gather indices must be integers")
    ax = axis % x.ndim
    n = x.shape[ax]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather index out of range [0, {n}) on axis {axis}")
    out = np.take(x.values, idx, axis=ax)
    shape = x.shape

    def backward(g):
        acc = np.zeros(shape)
        moved = np.moveaxis(acc, ax, 0)
        gm = np.moveaxis(g, list(range(ax, ax + idx.ndim)), list(range(idx.ndim)))
        np.add.at(moved, idx, gm)
        return (acc,)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------- normalizers

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.shape[axis] == 0:
        raise DomainError("softmax over an empty row")
    v = x.values
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), backward)


def layer_norm(x: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    v = x.values
    mu = v.mean(axis=-1, keepdims=True)
    centered = v - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _result(xhat, (x,), backward)


# ---------------------------------------------------------------- differentiation

def build_tape(loss: Tensor) -> list[Tensor]:
    """Topologically ordered list of every tensor reachable from ``loss``.

    Inputs always precede the tensors computed from them. The order is a
    deterministic function of the recorded graph.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Reverse-mode gradients of a scalar ``loss``.

    Leaf tensors with ``requires_grad`` get ``.grad`` set. When ``wrt`` is
    given, the gradients for those tensors are returned in order, with zeros
    for tensors that do not influence the loss.
    """
    if loss.values.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    wrt = list(wrt) if wrt is not None else None
    if wrt is not None:
        for p in wrt:
            p.grad = None
    if loss.requires_grad:
        tape = build_tape(loss)
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        for node in reversed(tape):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg
    if wrt is None:
        return None
    out = []
    for p in wrt:
        if p.grad is None:
            p.grad = np.zeros_like(p.values)
        out.append(p.grad)
    return out
