"""Dense numpy-backed tensors with a reverse-mode tape.

Every differentiable op builds its output eagerly and attaches a closure that
maps the output gradient to input gradients. ``Tensor.backward`` walks the
recorded graph in reverse topological order and accumulates into leaves.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-7

DEFAULT_DTYPE = np.float64

# every primitive with a backward rule; the grad-check registry must cover all of them
DIFFERENTIABLE_OPS = frozenset({
    "add", "sub", "mul", "div", "neg", "exp", "log", "relu", "square", "sqrt",
    "clamp", "softmax", "sum", "mean", "matmul", "reshape", "transpose",
    "diagonal", "diag_embed", "concat", "where",
    "conv2d", "adaptive_avg_pool", "bilinear_upsample",
})


def _op(name):
    assert name in DIFFERENTIABLE_OPS, name
    return name


# when a list, relu/clamp append the distance of their inputs to the nearest kink
_kink_log = None


class watch_kinks:
    """Context manager collecting how close any relu/clamp input came to a kink."""

    def __enter__(self):
        global _kink_log
        self._saved, _kink_log = _kink_log, []
        return self

    def __exit__(self, *exc):
        global _kink_log
        self.distances, _kink_log = _kink_log, self._saved
        return False

    @property
    def margin(self):
        return min(self.distances, default=np.inf)


def _log_kink(data, points):
    if _kink_log is not None and data.size:
        _kink_log.append(float(min(np.abs(data - p).min() for p in points)))


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


def set_default_dtype(dtype) -> None:
    global DEFAULT_DTYPE
    DEFAULT_DTYPE = np.dtype(dtype).type


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_prev", "_backward", "_op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, _prev=(), _backward=None, _op=""):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or (None if isinstance(data, (np.ndarray, np.generic)) and data.dtype.kind == "f" else DEFAULT_DTYPE))
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._prev = _prev
        self._backward = _backward
        self._op = _op

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # -- backward -------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._prev, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(np.array(data, dtype=dtype or DEFAULT_DTYPE), requires_grad=requires_grad)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward, op):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _prev=tuple(parents), _backward=backward, _op=op)


def broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"shapes {tuple(a)} and {tuple(b)} are not broadcast-compatible") from None


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- binary elementwise ------------------------------------------------------

def _binary(a, b):
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    broadcast_shape(a.shape, b.shape)
    return a, b


def add(a, b):
    a, b = _binary(a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return unbroadcast(g, sa), unbroadcast(g, sb)

    return _make(a.data + b.data, (a, b), backward, _op("add"))


def sub(a, b):
    a, b = _binary(a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return unbroadcast(g, sa), unbroadcast(-g, sb)

    return _make(a.data - b.data, (a, b), backward, _op("sub"))


def mul(a, b):
    a, b = _binary(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward, _op("mul"))


def div(a, b):
    a, b = _binary(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)

    return _make(out, (a, b), backward, _op("div"))


# -- unary elementwise -------------------------------------------------------

def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), _op("neg"))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), _op("exp"))


def log(a):
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("log of a negative value")
    ad = a.data
    with np.errstate(divide="ignore"):
        out = np.log(ad)
    return _make(out, (a,), lambda g: (g / ad,), _op("log"))


def relu(a):
    a = as_tensor(a)
    _log_kink(a.data, (0.0,))
    mask = a.data > 0  # derivative at exactly 0 is 0
    return _make(np.where(mask, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * mask,), _op("relu"))


def square(a):
    a = as_tensor(a)
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2 * g * ad,), _op("square"))


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), _op("sqrt"))


def clamp(a, lo=None, hi=None):
    """Clip to [lo, hi]; gradient passes inside the interval, zero outside."""
    a = as_tensor(a)
    ad = a.data
    _log_kink(ad, [p for p in (lo, hi) if p is not None] or [np.inf])
    mask = np.ones(ad.shape, dtype=bool)
    if lo is not None:
        mask &= ad >= lo
    if hi is not None:
        mask &= ad <= hi
    return _make(np.clip(ad, lo, hi), (a,), lambda g: (g * mask,), _op("clamp"))


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), backward, _op("softmax"))


# -- reductions ----------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(kept), shape).copy(),)

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, _op("sum"))


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    shape = a.shape
    kept = tuple(1 if i in axes else s for i, s in enumerate(shape))

    def backward(g):
        return (np.broadcast_to(g.reshape(kept) / count, shape).copy(),)

    return _make(a.data.mean(axis=axes, keepdims=keepdims), (a,), backward, _op("mean"))


# -- linear algebra and shape ops ----------------------------------------------

def matmul(a, b):
    """Matrix product over the last two axes; leading axes must match or broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return unbroadcast(ga, ad.shape), unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), backward, _op("matmul"))


def reshape(a, shape):
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {src} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(src),), _op("reshape"))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2) if a.ndim >= 2 else ()
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), _op("transpose"))


def swapaxes(a, i, j):
    axes = list(range(as_tensor(a).ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def diagonal(a):
    """Diagonal of the trailing two (square) axes."""
    a = as_tensor(a)
    n = a.shape[-1]
    if a.ndim < 2 or a.shape[-2] != n:
        raise ShapeError(f"diagonal needs square trailing axes, got {a.shape}")
    shape = a.shape
    idx = np.arange(n)

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[..., idx, idx] = g
        return (out,)

    return _make(np.diagonal(a.data, axis1=-2, axis2=-1).copy(), (a,), backward, _op("diagonal"))


def diag_embed(a):
    """Place the last axis on the diagonal of a new square matrix."""
    a = as_tensor(a)
    n = a.shape[-1]
    idx = np.arange(n)
    out = np.zeros(a.shape + (n,), dtype=a.data.dtype)
    out[..., idx, idx] = a.data
    return _make(out, (a,), lambda g: (g[..., idx, idx].copy(),), _op("diag_embed"))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, _op("concat"))


def where(mask, a, b):
    a, b = _binary(a, b)
    mask = np.asarray(mask, dtype=bool)

    def backward(g):
        return unbroadcast(np.where(mask, g, 0), a.shape), unbroadcast(np.where(mask, 0, g), b.shape)

    return _make(np.where(mask, a.data, b.data), (a, b), backward, _op("where"))


def eye(n, dtype=None):
    return Tensor(np.eye(n, dtype=dtype or DEFAULT_DTYPE))


def zeros(shape, requires_grad=False, dtype=None):
    return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad=requires_grad)


def ones(shape, requires_grad=False, dtype=None):
    return Tensor(np.ones(shape, dtype=dtype or DEFAULT_DTYPE), requires_grad=requires_grad)
