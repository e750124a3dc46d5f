"""A small reverse-mode differentiation engine over numpy arrays.

Only the operations the forecasting network and its losses need are
provided. Every :class:`Tensor` records its parents and a closure that
pushes the output gradient back to them; :meth:`Tensor.backward` walks the
graph in reverse topological order.

Gradients follow the input dtype, so the same graph runs in float32 for
training and float64 for finite-difference checks.
"""

from __future__ import annotations

import numpy as np

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_GELU_C = 0.044715


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

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
    def T(self):
        return swapaxes(self, -1, -2)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior gradients are no longer needed once propagated
                    node.grad = None

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __neg__ = lambda self: neg(self)
    __pow__ = lambda self, p: power(self, p)
    __getitem__ = lambda self, idx: getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _accum(t: Tensor, g) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _result(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, parents if req else (), backward if req else None)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * out / b.data, b.shape))

    return _result(out, (a, b), back)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: _accum(a, -g))


def power(a: Tensor, p: float) -> Tensor:
    def back(g):
        _accum(a, g * p * a.data ** (p - 1))

    return _result(a.data**p, (a,), back)


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (-1, 1))), a.shape[:-1])
    if a.ndim == 1:
        out = matmul(reshape(a, (1, -1)), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])

    def back(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim >= 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            _accum(b, gb)

    return _result(a.data @ b.data, (a, b), back)


# ---------------------------------------------------------------- reductions

def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def max_(a: Tensor, axis: int) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis).squeeze(axis)

    def back(g):
        z = np.zeros_like(a.data)
        np.put_along_axis(z, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        _accum(a, z)

    return _result(out, (a,), back)


# ---------------------------------------------------------------- shape ops

def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(a.shape)))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,), lambda g: _accum(a, np.transpose(g, inv)))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _result(np.swapaxes(a.data, i, j), (a,), lambda g: _accum(a, np.swapaxes(g, i, j)))


def _is_advanced(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def getitem(a: Tensor, idx) -> Tensor:
    advanced = _is_advanced(idx)

    def back(g):
        z = np.zeros_like(a.data)
        if advanced:
            np.add.at(z, idx, g)
        else:
            z[idx] = g
        _accum(a, z)

    return _result(a.data[idx], (a,), back)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    dtype = next((t.dtype for t in tensors if t.requires_grad), tensors[0].dtype)
    tensors = [t if t.requires_grad or t.dtype == dtype else Tensor(t.data.astype(dtype)) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, cuts, axis=axis)):
            _accum(t, piece)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis if axis >= 0 else tensors[0].ndim + 1 + axis
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis=axis)


# ---------------------------------------------------------------- elementwise

def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: _accum(a, g * out))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: _accum(a, g / a.data))


def sqrt(a: Tensor) -> Tensor:
    """Square root with a zero (sub)gradient at exactly 0."""
    out = np.sqrt(np.maximum(a.data, 0))

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(out > 0, 0.5 / out, 0.0)
        _accum(a, g * d.astype(a.dtype))

    return _result(out, (a,), back)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: _accum(a, g * (1 - out * out)))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: _accum(a, g * mask))


def gelu(a: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    x = a.data
    inner = _SQRT_2_OVER_PI * (x + _GELU_C * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1 + th)

    def back(g):
        d = 0.5 * (1 + th) + 0.5 * x * (1 - th * th) * _SQRT_2_OVER_PI * (1 + 3 * _GELU_C * x * x)
        _accum(a, g * d)

    return _result(out, (a,), back)


def arccos(a: Tensor) -> Tensor:
    """arccos of the input clamped to [-1, 1]; clamped entries get zero gradient."""
    x = np.clip(a.data, -1.0, 1.0)
    inside = (a.data > -1.0) & (a.data < 1.0)

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(inside, -1.0 / np.sqrt(np.maximum(1.0 - x * x, 1e-300)), 0.0)
        _accum(a, (g * d).astype(a.dtype))

    return _result(np.arccos(x), (a,), back)


# ---------------------------------------------------------------- fused layers

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        _accum(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _result(out, (a,), back)


def layer_norm(a: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis (no affine parameters)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        _accum(a, inv * (g - gm - xhat * gx))

    return _result(xhat, (a,), back)


def knn_max(h: Tensor, idx: np.ndarray) -> Tensor:
    """Per-channel max of ``h`` over each point's neighbour set.

    Args:
        h: (B, N, P) point features.
        idx: (B, N, k) integer neighbour indices into axis 1.
    """
    B, N, P = h.shape
    k = idx.shape[-1]
    flat = (idx + (np.arange(B) * N)[:, None, None]).reshape(-1)
    hf = h.data.reshape(B * N, P)
    gathered = hf[flat].reshape(B, N, k, P)
    arg = gathered.argmax(axis=2)
    out = np.take_along_axis(gathered, arg[:, :, None, :], axis=2)[:, :, 0, :]
    src_rows = np.take_along_axis(flat.reshape(B, N, k), arg.reshape(B, N, P), axis=2)  # (B, N, P)
    target = (src_rows * P + np.arange(P)).reshape(-1)

    def back(g):
        z = np.bincount(target, weights=g.reshape(-1).astype(np.float64), minlength=B * N * P)
        _accum(h, z.reshape(B, N, P).astype(h.dtype))

    return _result(out, (h,), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def astype(a: Tensor, dtype) -> Tensor:
    dtype = np.dtype(dtype)
    if a.dtype == dtype:
        return a
    return _result(a.data.astype(dtype), (a,), lambda g: _accum(a, g.astype(a.dtype)))


def cross(u: Tensor, v: Tensor) -> Tensor:
    """Cross product over the last axis (size 3)."""
    u0, u1, u2 = u[..., 0], u[..., 1], u[..., 2]
    v0, v1, v2 = v[..., 0], v[..., 1], v[..., 2]
    return stack([u1 * v2 - u2 * v1, u2 * v0 - u0 * v2, u0 * v1 - u1 * v0], axis=-1)


def atan2(y: Tensor, x: Tensor) -> Tensor:
    y, x = _pair(y, x)
    r2 = x.data * x.data + y.data * y.data
    safe = np.where(r2 > 0, r2, 1.0)

    def back(g):
        # gradient is undefined at the origin; use 0 there
        _accum(y, _unbroadcast(np.where(r2 > 0, g * x.data / safe, 0.0), y.shape))
        _accum(x, _unbroadcast(np.where(r2 > 0, -g * y.data / safe, 0.0), x.shape))

    return _result(np.arctan2(y.data, x.data), (y, x), back)
