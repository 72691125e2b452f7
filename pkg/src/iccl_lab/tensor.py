"""Small reverse-mode autodiff engine on top of numpy.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure that pushes the upstream gradient back to them.  ``backward`` walks the
recorded graph in reverse topological order.  Gradients accumulate into
``.grad`` across parents within one backward pass (shared parameters receive
the sum of their contributions); calling ``backward`` twice on the same loss
raises instead of silently double-counting.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float64
NORM_EPS = 1e-12


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._consumed = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad = t.grad + g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def scale(a, c):
    """Multiply by a python scalar (no gradient w.r.t. ``c``)."""
    a = as_tensor(a)
    c = float(c)

    def bw(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not conformable")

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with weight stored as (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {weight.shape}")
    out = matmul(x, transpose(weight))
    if bias is not None:
        out = add_bias(out, bias)
    return out


def add_bias(x, bias):
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.data.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias: input shape {x.shape} and bias shape {bias.shape} mismatch")
    return add(x, bias)


def transpose(a):
    a = as_tensor(a)

    def bw(g):
        _accum(a, g.T)

    return _make(a.data.T, (a,), bw)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None

    def bw(g):
        _accum(a, g.reshape(a.shape))

    return _make(out, (a,), bw)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), bw)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        _accum(a, g * out)

    return _make(out, (a,), bw)


def log(a):
    a = as_tensor(a)

    def bw(g):
        _accum(a, g / a.data)

    return _make(np.log(a.data), (a,), bw)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def dot(a, b):
    """Row-wise dot product along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"dot: shapes {a.shape} and {b.shape} differ")
    return sum(mul(a, b), axis=-1)


def l2_normalize(a, eps=NORM_EPS):
    """Scale rows to unit L2 norm; norms below ``eps`` are clamped to ``eps``."""
    a = as_tensor(a)
    raw = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    clamped = raw < eps
    n = np.where(clamped, eps, raw)
    out = a.data / n

    def bw(g):
        radial = (g * out).sum(axis=-1, keepdims=True)
        ga = (g - np.where(clamped, 0.0, out * radial)) / n
        _accum(a, ga)

    return _make(out, (a,), bw)


def logsumexp(a, axis=-1):
    a = as_tensor(a)
    shift = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - shift)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + shift).squeeze(axis)
    soft = e / s

    def bw(g):
        _accum(a, np.expand_dims(g, axis) * soft)

    return _make(out, (a,), bw)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shift = a.data.max(axis=axis, keepdims=True)
    z = a.data - shift
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def bw(g):
        _accum(a, g - soft * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), bw)


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accum(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), bw)


def pick(a, index):
    """Gather ``a[i, index[i]]`` for a 2-D tensor; returns shape (batch,)."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or index.shape != (a.shape[0],):
        raise ShapeError(f"pick: input shape {a.shape} and index shape {index.shape} mismatch")
    if index.size and (index.min() < 0 or index.max() >= a.shape[1]):
        raise IndexError(f"pick: index out of range for {a.shape[1]} columns")
    rows = np.arange(a.shape[0])

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, index), g)
        _accum(a, ga)

    return _make(a.data[rows, index], (a,), bw)


def backward(loss):
    """Populate ``.grad`` on every ``requires_grad`` leaf reachable from ``loss``."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward already called on this graph; re-run the forward pass")
    if not loss.requires_grad:
        raise RuntimeError("loss does not depend on any tensor with requires_grad=True")

    order, seen = [], set()
    stack = [(loss, False)]
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
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            continue
        # route parent grads through a scratch dict so interior nodes don't keep .grad
        parents = list({id(p): p for p in node._parents}.values())  # x*x lists x twice
        saved = [(p, p.grad) for p in parents]
        for p in parents:
            p.grad = None
        node._backward(g)
        for p, prev in saved:
            contrib = p.grad
            p.grad = prev
            if contrib is None:
                continue
            if p._backward is None:
                _accum(p, contrib)
            elif id(p) in grads:
                grads[id(p)] = grads[id(p)] + contrib
            else:
                grads[id(p)] = contrib
    loss._consumed = True
