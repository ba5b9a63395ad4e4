"""Dense float64 tensors with reverse-mode differentiation.

Every op builds a node holding its forward value and a closure that pushes
the output adjoint to its parents. ``Tensor.backward`` walks the graph in
reverse topological order and *accumulates* into ``.grad``; call
``zero_grad`` on leaves between steps.

Only rank <= 2 is supported. Binary elementwise ops broadcast a ``(1, d)``,
``(n, 1)`` or scalar operand against an ``(n, d)`` one.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "as_tensor",
    "matmul",
    "spmm",
    "add",
    "sub",
    "mul",
    "scale",
    "power",
    "transpose",
    "concat",
    "row_select",
    "col_slice",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "square",
    "sum",
    "mean",
    "mean_rows",
    "row_dot",
    "softmax",
    "clamp",
    "maximum0",
    "dropout",
    "noisy_or_two_hop",
]


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(f"rank {arr.ndim} tensors are not supported (shape {arr.shape})")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological(self)
        # intermediate adjoints belong to this pass only
        for node in order:
            if node._parents:
                node.grad = None
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        return mul(self, power(as_tensor(other), -1.0))

    @property
    def T(self):
        return transpose(self)


def _topological(root):
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
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents if req else (), _backward=backward if req else None)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.sum(g)
    if len(shape) == 1:
        # (d,) against (n, d)
        return g.reshape(-1, shape[0]).sum(axis=0) if g.ndim == 2 else g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True).reshape(shape)


def _broadcast_check(a, b, opname):
    sa, sb = a.shape, b.shape
    if sa == sb or a.data.size == 1 or b.data.size == 1:
        return
    if len(sa) == 2 and len(sb) == 2:
        ok = all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb))
        if ok:
            return
    raise ShapeError(f"{opname}: incompatible shapes {sa} and {sb}")


# elementwise binary ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), back)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)

    def back(g):
        a._accumulate(g * c)

    return _make(a.data * c, (a,), back)


def power(a, p: float) -> Tensor:
    """Elementwise ``a ** p``; caller guarantees positivity for fractional p."""
    a = as_tensor(a)
    val = a.data ** p

    def back(g):
        a._accumulate(g * p * a.data ** (p - 1.0))

    return _make(val, (a,), back)


# linear algebra / layout -----------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), back)


def spmm(const, b) -> Tensor:
    """``const @ b`` for a constant (dense or scipy.sparse) left operand."""
    b = as_tensor(b)
    if b.data.ndim != 2 or const.shape[1] != b.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {const.shape} and {b.shape}")

    def back(g):
        b._accumulate(np.asarray(const.T @ g))

    return _make(np.asarray(const @ b.data), (b,), back)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs rank 2, got {a.shape}")

    def back(g):
        a._accumulate(g.T)

    return _make(a.data.T, (a,), back)


def concat(tensors, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of zero tensors")
    other = 1 - axis
    for t in ts:
        if t.data.ndim != 2 or t.shape[other] != ts[0].shape[other]:
            raise ShapeError(f"concat(axis={axis}): incompatible shapes {ts[0].shape} and {t.shape}")
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accumulate(g[lo:hi] if axis == 0 else g[:, lo:hi])

    return _make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts), back)


def row_select(a, idx) -> Tensor:
    """Gather rows ``a[idx]`` (embedding lookup); repeated indices accumulate."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"row_select: index out of range for {a.shape[0]} rows")

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _make(a.data[idx], (a,), back)


def col_slice(a, lo: int, hi: int) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        full[:, lo:hi] = g
        a._accumulate(full)

    return _make(a.data[:, lo:hi], (a,), back)


# elementwise unary -----------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def back(g):
        a._accumulate(g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), back)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(np.atleast_1d(a.data)).reshape(a.shape)

    def back(g):
        a._accumulate(g * s * (1.0 - s))

    return _make(s, (a,), back)


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)

    def back(g):
        a._accumulate(g * e)

    return _make(e, (a,), back)


def log(a) -> Tensor:
    a = as_tensor(a)

    def back(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), back)


def square(a) -> Tensor:
    a = as_tensor(a)

    def back(g):
        a._accumulate(2.0 * g * a.data)

    return _make(a.data * a.data, (a,), back)


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; zero gradient where the clip is active."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def back(g):
        a._accumulate(g * inside)

    return _make(np.clip(a.data, lo, hi), (a,), back)


def maximum0(a) -> Tensor:
    """Hinge ``max(0, a)``; alias of relu kept for loss code readability."""
    return relu(a)


# reductions ------------------------------------------------------------------

def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    val = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(val, (a,), back)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def mean_rows(a) -> Tensor:
    """Average over rows: ``(n, d) -> (1, d)``."""
    return mean(a, axis=0, keepdims=True)


def row_dot(a, b) -> Tensor:
    """Dot product of matching rows: ``(n, d), (n, d) -> (n, 1)``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"row_dot: incompatible shapes {a.shape} and {b.shape}")
    return sum(mul(a, b), axis=1, keepdims=True)


def softmax(a) -> Tensor:
    """Row-wise softmax over columns."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        a._accumulate(s * (g - (g * s).sum(axis=1, keepdims=True)))

    return _make(s, (a,), back)


def dropout(a, rate: float, rng, training: bool) -> Tensor:
    """Inverted dropout: Bernoulli keep-mask scaled by ``1 / (1 - rate)``."""
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor(mask))


def noisy_or_two_hop(a) -> Tensor:
    """Smooth two-hop closure of a symmetric ``[0, 1]`` adjacency.

    ``out[j, k] = 1 - (1 - a[j, k]) * prod_m (1 - a[j, m] a[m, k])`` off the
    diagonal, zero on it. On 0/1 input this is exactly ``A + A @ A``
    binarized with the diagonal stripped.
    """
    a = as_tensor(a)
    A = a.data
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ShapeError(f"noisy_or_two_hop needs a square matrix, got {A.shape}")
    # paths[j, m, k] = A[j, m] * A[m, k]
    paths = A[:, :, None] * A[None, :, :]
    miss = 1.0 - paths
    # leave-one-out products along m without division
    pre = np.ones_like(miss)
    suf = np.ones_like(miss)
    if n > 1:
        pre[:, 1:, :] = np.cumprod(miss[:, :-1, :], axis=1)
        suf[:, :-1, :] = np.cumprod(miss[:, :0:-1, :], axis=1)[:, ::-1, :]
    loo = pre * suf
    prod_all = loo[:, 0, :] * miss[:, 0, :]
    direct_miss = 1.0 - A
    offdiag = 1.0 - np.eye(n)
    out = (1.0 - direct_miss * prod_all) * offdiag

    def back(g):
        g = g * offdiag
        # d out / d A[j,k] (direct term)
        grad = g * prod_all
        # d out / d paths[j,m,k] = direct_miss[j,k] * loo[j,m,k]
        gp = (g * direct_miss)[:, None, :] * loo
        grad = grad + np.einsum("jmk,mk->jm", gp, A)
        grad = grad + np.einsum("jmk,jm->mk", gp, A)
        a._accumulate(grad)

    return _make(out, (a,), back)
