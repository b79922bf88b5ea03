"""Layers used by the threshold predictor and the SAC networks."""
from __future__ import annotations

import copy
import math
from collections import OrderedDict
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ConfigError(ValueError):
    pass


class Module:
    """Parameter container with deterministic (registration-order) naming."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._modules: "OrderedDict[str, Module]" = OrderedDict()

    def param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def module(self, name: str, mod: "Module") -> "Module":
        self._modules[name] = mod
        return mod

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        for k, v in self._params.items():
            out[prefix + k] = v
        for k, m in self._modules.items():
            out.update(m.named_parameters(prefix + k + "."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())

    def load_state_dict(self, state) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters {sorted(missing)}")
        for k, p in params.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.data.shape:
                raise ValueError(f"{k}: shape {v.shape} != {p.data.shape}")
            p.data = v.copy()

    def clone(self) -> "Module":
        return copy.deepcopy(self)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.w = self.param("w", xavier_uniform(rng, n_in, n_out))
        self.b = self.param("b", np.zeros(n_out))

    def __call__(self, x) -> Tensor:
        return T.linear(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, n: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = self.param("gamma", np.ones(n))
        self.beta = self.param("beta", np.zeros(n))

    def __call__(self, x) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    def __init__(self, sizes, rng: np.random.Generator):
        super().__init__()
        self.layers = [self.module(f"l{i}", Dense(a, b, rng)) for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]

    def __call__(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention over (..., seq, hidden) inputs."""

    def __init__(self, hidden: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if heads < 1 or hidden % heads:
            raise ConfigError(f"hidden size {hidden} is not divisible by {heads} heads")
        self.hidden, self.heads, self.dk = hidden, heads, hidden // heads
        self.q = self.module("q", Dense(hidden, hidden, rng))
        self.k = self.module("k", Dense(hidden, hidden, rng))
        self.v = self.module("v", Dense(hidden, hidden, rng))
        self.o = self.module("o", Dense(hidden, hidden, rng))
        self.last_weights: Optional[np.ndarray] = None

    def _split(self, x: Tensor) -> Tensor:
        *lead, s, _ = x.shape
        x = T.reshape(x, (*lead, s, self.heads, self.dk))
        nd = len(lead)
        return T.transpose(x, tuple(range(nd)) + (nd + 1, nd, nd + 2))

    def __call__(self, x) -> Tensor:
        x = T._t(x)
        *lead, s, h = x.shape
        if h != self.hidden:
            raise T.ShapeError(f"attention expects hidden {self.hidden}, got {x.shape}")
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        nd = len(lead)
        kt = T.transpose(k, tuple(range(nd + 1)) + (nd + 2, nd + 1))
        scores = T.matmul(q, kt) * (1.0 / math.sqrt(self.dk))
        w = T.softmax(scores, axis=-1)
        self.last_weights = w.data
        ctx = T.matmul(w, v)
        ctx = T.transpose(ctx, tuple(range(nd)) + (nd + 1, nd, nd + 2))
        ctx = T.reshape(ctx, (*lead, s, h))
        return self.o(ctx)


class LSTMCell(Module):
    """Standard LSTM cell; gate order i, f, g, o."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.hidden = hidden
        bound = 1.0 / math.sqrt(hidden)
        self.wx = self.param("wx", rng.uniform(-bound, bound, size=(n_in, 4 * hidden)))
        self.wh = self.param("wh", rng.uniform(-bound, bound, size=(hidden, 4 * hidden)))
        self.b = self.param("b", rng.uniform(-bound, bound, size=4 * hidden))

    def __call__(self, x_t, h_prev, c_prev):
        z = T.add(T.linear(x_t, self.wx, self.b), T.matmul(h_prev, self.wh))
        H = self.hidden
        i = T.sigmoid(z[..., 0:H])
        f = T.sigmoid(z[..., H:2 * H])
        g = T.tanh(z[..., 2 * H:3 * H])
        o = T.sigmoid(z[..., 3 * H:4 * H])
        c = T.add(T.mul(f, c_prev), T.mul(i, g))
        h = T.mul(o, T.tanh(c))
        return h, c

    def unroll(self, xs, reverse: bool = False) -> list:
        """Run over a (batch, seq, feat) tensor; returns per-step hidden states in time order."""
        xs = T._t(xs)
        batch, steps = xs.shape[0], xs.shape[1]
        h = T.Tensor(np.zeros((batch, self.hidden)))
        c = T.Tensor(np.zeros((batch, self.hidden)))
        outs = [None] * steps
        order = range(steps - 1, -1, -1) if reverse else range(steps)
        for t in order:
            h, c = self(xs[:, t, :], h, c)
            outs[t] = h
        return outs


class BiLSTM(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.fwd = self.module("fwd", LSTMCell(n_in, hidden, rng))
        self.bwd = self.module("bwd", LSTMCell(n_in, hidden, rng))

    def __call__(self, xs) -> Tensor:
        f = self.fwd.unroll(xs)
        b = self.bwd.unroll(xs, reverse=True)
        return T.stack([T.concat([hf, hb], axis=-1) for hf, hb in zip(f, b)], axis=1)


class EncoderLayer(Module):
    """Z = FFN(LN(X + MHSA(X))); ``standard`` adds the FFN residual and norm."""

    def __init__(self, hidden: int, heads: int, rng: np.random.Generator, ffn_mult: int = 2,
                 standard: bool = False):
        super().__init__()
        self.standard = standard
        self.attn = self.module("attn", MultiHeadSelfAttention(hidden, heads, rng))
        self.ln = self.module("ln", LayerNorm(hidden))
        self.ff1 = self.module("ff1", Dense(hidden, ffn_mult * hidden, rng))
        self.ff2 = self.module("ff2", Dense(ffn_mult * hidden, hidden, rng))
        if standard:
            self.ln2 = self.module("ln2", LayerNorm(hidden))

    def __call__(self, x) -> Tensor:
        y = self.ln(T.add(x, self.attn(x)))
        z = self.ff2(T.relu(self.ff1(y)))
        if self.standard:
            z = self.ln2(T.add(y, z))
        return z
