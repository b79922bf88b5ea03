"""Define-by-run reverse-mode autodiff over float64 numpy arrays."""
from __future__ import annotations

import os
from typing import Callable, Optional, Sequence

import numpy as np

CHECK_FINITE = os.environ.get("OPSCHED_CHECK_FINITE", "") not in ("", "0")


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "_grad", "_parents", "_backward", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: tuple = (), _backward: Optional[Callable] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self._grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        if CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values produced ({name or 'tensor'})")

    # grads read as zero until backward() populates them
    @property
    def grad(self) -> np.ndarray:
        return np.zeros_like(self.data) if self._grad is None else self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    def zero_grad(self):
        self._grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g):
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self._grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node._grad is not None:
                node._backward(node._grad)

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return mul(self, 1.0 / o) if not isinstance(o, Tensor) else div(self, o)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)
    def transpose(self, *axes): return transpose(self, axes or None)


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data, parents, backward, name=None) -> Tensor:
    parents = tuple(p for p in parents if p.requires_grad)
    if not parents:
        return Tensor(data, name=name)
    return Tensor(data, requires_grad=True, name=name, _parents=parents, _backward=backward)


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        if a.requires_grad: a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad: b._accum(_unbroadcast(g, b.shape))
    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        if a.requires_grad: a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad: b._accum(_unbroadcast(-g, b.shape))
    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        if a.requires_grad: a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad: b._accum(_unbroadcast(g * a.data, b.shape))
    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def bw(g):
        if a.requires_grad: a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad: b._accum(_unbroadcast(-g * out / b.data, b.shape))
    return _make(out, (a, b), bw, "div")


def _unary(a, fwd, dfn, name):
    a = _t(a)
    out = fwd(a.data)

    def bw(g):
        a._accum(g * dfn(a.data, out))
    return _make(out, (a,), bw, name)


def sigmoid(a) -> Tensor:
    def f(x):
        return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _unary(a, f, lambda x, y: y * (1.0 - y), "sigmoid")


def tanh(a) -> Tensor:
    return _unary(a, np.tanh, lambda x, y: 1.0 - y * y, "tanh")


def relu(a) -> Tensor:
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64), "relu")


def exp(a) -> Tensor:
    return _unary(a, np.exp, lambda x, y: y, "exp")


def log(a) -> Tensor:
    return _unary(a, np.log, lambda x, y: 1.0 / x, "log")


def square(a) -> Tensor:
    return _unary(a, np.square, lambda x, y: 2.0 * x, "square")


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input is inside the range."""
    return _unary(a, lambda x: np.clip(x, lo, hi),
                  lambda x, y: ((x >= lo) & (x <= hi)).astype(np.float64), "clamp")


def minimum(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast(a, b, "minimum")
    pick_a = a.data <= b.data

    def bw(g):
        if a.requires_grad: a._accum(_unbroadcast(g * pick_a, a.shape))
        if b.requires_grad: b._accum(_unbroadcast(g * ~pick_a, b.shape))
    return _make(np.where(pick_a, a.data, b.data), (a, b), bw, "minimum")


# --- reductions & shape ------------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _t(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))
    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _t(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def sum_sq(a) -> Tensor:
    return tsum(square(a))


def reshape(a, shape) -> Tensor:
    a = _t(a)
    old = a.shape

    def bw(g):
        a._accum(g.reshape(old))
    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _t(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        a._accum(g.transpose(inv))
    return _make(a.data.transpose(axes), (a,), bw, "transpose")


def getitem(a, idx) -> Tensor:
    a = _t(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g) if _fancy(idx) else full.__setitem__(idx, g)
        a._accum(full)
    return _make(a.data[idx], (a,), bw, "slice")


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_t(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None

    def bw(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])
    return _make(out, ts, bw, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_t(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=axis))
    return _make(out, ts, bw, "stack")


# --- linear algebra & normalisation -----------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        if a.requires_grad: a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad: b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, w, b=None) -> Tensor:
    """x @ w + b as one node."""
    x, w = _t(x), _t(w)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    out = x.data @ w.data
    parents = (x, w)
    if b is not None:
        b = _t(b)
        out = out + b.data
        parents = (x, w, b)

    def bw(g):
        if x.requires_grad: x._accum(g @ w.data.T)
        if w.requires_grad:
            w._accum(x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
        if b is not None and b.requires_grad:
            b._accum(g.reshape(-1, g.shape[-1]).sum(axis=0))
    return _make(out, parents, bw, "linear")


def softmax(a, axis: int = -1) -> Tensor:
    a = _t(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))
    return _make(out, (a,), bw, "softmax")


def layer_norm(x, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale/shift."""
    x = _t(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    parents = [x]
    if gamma is not None:
        gamma = _t(gamma)
        out = out * gamma.data
        parents.append(gamma)
    if beta is not None:
        beta = _t(beta)
        out = out + beta.data
        parents.append(beta)

    def bw(g):
        if gamma is not None and gamma.requires_grad:
            gamma._accum(_unbroadcast(g * xhat, gamma.shape))
        if beta is not None and beta.requires_grad:
            beta._accum(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gx = g * gamma.data if gamma is not None else g
            n = x.shape[-1]
            x._accum(inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                                - xhat * (gx * xhat).sum(axis=-1, keepdims=True)))
    return _make(out, parents, bw, "layer_norm")
