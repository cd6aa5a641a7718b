"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array and (optionally) a record of how it was
produced. ``backward`` walks that record once, in reverse topological order,
and accumulates gradients additively into every reachable leaf that has
``requires_grad`` set. The op set is the minimum the rest of the project
needs: elementwise arithmetic with broadcasting, matmul, reductions,
indexing/concat/reshape plumbing, the usual nonlinearities, and cumsum.

Design constraints:
  * float64 only;
  * single-threaded graphs (no locking anywhere);
  * no higher-order derivatives: ``grad`` holds plain numpy arrays.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (used by finite differences
    and evaluation loops)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._vjp = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple, vjp) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- autodiff --------------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable requires_grad leaf.

        ``self`` must be scalar (size 1). Repeated calls keep adding into
        ``grad``.
        """
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ContractError("backward on a tensor with no recorded graph")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        flowing = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                # leaf: persist the gradient
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in flowing:
                    flowing[pid] = flowing[pid] + pg
                else:
                    flowing[pid] = pg

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take_slice(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _coerce(other):
    """Return (array, tensor-or-None) for a binary op operand."""
    if isinstance(other, Tensor):
        return other.data, other
    return np.asarray(other, dtype=np.float64), None


# -- arithmetic -----------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    bdata, bt = _coerce(b)
    out_data = a.data + bdata
    if bt is None:
        return Tensor._make(out_data, (a,), lambda g: (_unbroadcast(g, a.data.shape),))
    return Tensor._make(
        out_data,
        (a, bt),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, bt.data.shape)),
    )


def sub(a: Tensor, b) -> Tensor:
    bdata, bt = _coerce(b)
    out_data = a.data - bdata
    if bt is None:
        return Tensor._make(out_data, (a,), lambda g: (_unbroadcast(g, a.data.shape),))
    return Tensor._make(
        out_data,
        (a, bt),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, bt.data.shape)),
    )


def mul(a: Tensor, b) -> Tensor:
    bdata, bt = _coerce(b)
    out_data = a.data * bdata
    if bt is None:
        return Tensor._make(out_data, (a,), lambda g: (_unbroadcast(g * bdata, a.data.shape),))
    adata = a.data
    return Tensor._make(
        out_data,
        (a, bt),
        lambda g: (
            _unbroadcast(g * bdata, adata.shape),
            _unbroadcast(g * adata, bt.data.shape),
        ),
    )


def div(a: Tensor, b) -> Tensor:
    bdata, bt = _coerce(b)
    out_data = a.data / bdata
    if bt is None:
        return Tensor._make(out_data, (a,), lambda g: (_unbroadcast(g / bdata, a.data.shape),))
    adata = a.data
    return Tensor._make(
        out_data,
        (a, bt),
        lambda g: (
            _unbroadcast(g / bdata, adata.shape),
            _unbroadcast(-g * adata / (bdata * bdata), bt.data.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent) -> Tensor:
    """Elementwise power with a constant (non-Tensor) exponent."""
    e = float(exponent)
    out_data = a.data**e
    return Tensor._make(out_data, (a,), lambda g: (g * e * a.data ** (e - 1.0),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """np.matmul semantics for 2-D weights and equal-leading-dim batches."""
    b = as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs ndim>=2 operands, got {a.data.shape} @ {b.data.shape}")
    out_data = np.matmul(a.data, b.data)

    def vjp(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return Tensor._make(out_data, (a, b), vjp)


# -- nonlinearities --------------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return Tensor._make(out_data, (a,), lambda g: (g * out_data,))


def log(a: Tensor) -> Tensor:
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    return Tensor._make(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(a: Tensor) -> Tensor:
    # exponentiate only nonpositive values so large logits cannot overflow
    z = np.exp(-np.abs(a.data))
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return Tensor._make(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def relu(a: Tensor) -> Tensor:
    # np.maximum keeps non-finite inputs visible instead of mapping them to 0
    mask = a.data > 0
    return Tensor._make(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)
    return Tensor._make(out_data, (a,), lambda g: (g * 0.5 / out_data,))


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    """Clip values; gradient is passed through strictly inside the bounds."""
    out_data = np.clip(a.data, lo, hi)
    inside = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        inside &= a.data > lo
    if hi is not None:
        inside &= a.data < hi
    return Tensor._make(out_data, (a,), lambda g: (g * inside,))


# -- reductions --------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return Tensor._make(out_data, (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def cumsum(a: Tensor, axis: int) -> Tensor:
    out_data = np.cumsum(a.data, axis=axis)

    def vjp(g):
        rev = np.flip(g, axis=axis)
        return (np.flip(np.cumsum(rev, axis=axis), axis=axis),)

    return Tensor._make(out_data, (a,), vjp)


# -- shape plumbing ----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return Tensor._make(
        a.data.swapaxes(ax1, ax2), (a,), lambda g: (g.swapaxes(ax1, ax2),)
    )


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out_data, tuple(tensors), vjp)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._make(out_data, tuple(tensors), vjp)


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Select along one axis with an integer index array (repeats allowed)."""
    indices = np.asarray(indices)
    out_data = np.take(a.data, indices, axis=axis)

    def vjp(g):
        acc = np.zeros_like(a.data)
        acc_m = np.moveaxis(acc, axis, 0)
        np.add.at(acc_m, indices, np.moveaxis(g, axis, 0))
        return (acc,)

    return Tensor._make(out_data, (a,), vjp)


def take_slice(a: Tensor, key) -> Tensor:
    out_data = a.data[key]

    def vjp(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, key, g)
        return (acc,)

    return Tensor._make(out_data, (a,), vjp)


# -- composites used everywhere ---------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; the max-shift is constant w.r.t. the
    gradient, which is exact because softmax is shift-invariant."""
    shifted = sub(a, a.data.max(axis=axis, keepdims=True))
    e = exp(shifted)
    return div(e, tsum(e, axis=axis, keepdims=True))


def straight_through_onehot(soft: Tensor, axis: int = -1) -> Tensor:
    """One-hot of argmax in the forward pass, soft gradients in the backward."""
    idx = soft.data.argmax(axis=axis, keepdims=True)
    hard = np.zeros_like(soft.data)
    np.put_along_axis(hard, idx, 1.0, axis=axis)
    return add(soft, hard - soft.data)
