"""Synthetic model graphs shaped after common CNN / transformer backbones.

Structures are hand-built so operator counts match the reference models;
per-operator sparsity is drawn from kind-conditioned Beta distributions
stored in ``data/fixtures.json``.
"""
from __future__ import annotations

import json
import zlib
from functools import lru_cache
from importlib import resources
from typing import Callable, Optional, Sequence

import numpy as np

from .graph import GraphError, ModelGraph, OperatorKind as K, TensorShape, make_node


@lru_cache(maxsize=1)
def fixture_params() -> dict:
    return json.loads(resources.files("opsched.data").joinpath("fixtures.json").read_text(encoding="utf-8"))


def _stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


class GraphBuilder:
    def __init__(self, name: str, rng: np.random.Generator, batch: int = 1):
        self.name = name
        self.rng = rng
        self.batch = batch
        self.nodes = []
        self.edges = []
        self._shape = {}
        self._sparsity = {}
        self._beta = fixture_params()["sparsity_beta"]

    def shape(self, nid: int) -> TensorShape:
        return self._shape[nid]

    def add(self, kind: K, inputs: Sequence[int], out, in_shape=None, kernel=None) -> int:
        nid = len(self.nodes)
        if in_shape is None:
            in_shape = self._shape[inputs[0]]
        in_shape = in_shape if isinstance(in_shape, TensorShape) else TensorShape(*in_shape)
        out = out if isinstance(out, TensorShape) else TensorShape(*out)
        if kind is K.RESHAPE and inputs:
            rho = self._sparsity[inputs[0]]
        else:
            a, b = self._beta[kind.value]
            rho = float(self.rng.beta(a, b))
        rho = round(rho, 6)
        self.nodes.append(make_node(nid, kind, in_shape, out, sparsity=rho, kernel=kernel))
        self.edges.extend((i, nid) for i in inputs)
        self._shape[nid] = out
        self._sparsity[nid] = rho
        return nid

    def conv(self, x, c_out, k=3, stride=1, groups_dw=False, in_shape=None):
        s = self._shape[x] if x is not None else in_shape
        h, w = max(1, s.height // stride), max(1, s.width // stride)
        c_in = 1 if groups_dw else s.channels
        if groups_dw:
            c_out = s.channels
        # depthwise: per-channel kernel, expressed as Cin=1 so Kh*Kw*Cin*Cout*H*W holds
        return self.add(K.CONV2D, [] if x is None else [x], (s.batch, c_out, h, w), in_shape=s,
                        kernel=(k, k, c_in, c_out))

    def same(self, kind, x, *more):
        s = self._shape[x]
        return self.add(kind, [x, *more], s)

    def pool(self, x, stride=2, global_=False):
        s = self._shape[x]
        if global_:
            out = (s.batch, s.channels, 1, 1)
        else:
            out = (s.batch, s.channels, max(1, s.height // stride), max(1, s.width // stride))
        return self.add(K.POOLING, [x], out)

    def linear(self, x, c_out):
        s = self._shape[x]
        return self.add(K.LINEAR, [x], (s.batch, c_out, s.height, s.width))

    def reshape(self, x, out):
        return self.add(K.RESHAPE, [x], out)

    def build(self) -> ModelGraph:
        return ModelGraph(self.name, tuple(self.nodes), tuple(self.edges))


def _resnet18(b: GraphBuilder):
    B = b.batch
    x = b.conv(None, 64, k=7, stride=2, in_shape=TensorShape(B, 3, 224, 224))
    x = b.pool(x, 2)
    c_in = 64
    for c_out, stride in [(64, 1), (64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2), (512, 1)]:
        y = b.conv(x, c_out, 3, stride)
        y = b.same(K.BATCHNORM, y)
        y = b.same(K.RELU, y)
        y = b.conv(y, c_out, 3, 1)
        y = b.same(K.BATCHNORM, y)
        skip = x if (stride == 1 and c_in == c_out) else b.conv(x, c_out, 1, stride)
        x = b.same(K.ADD, y, skip)
        c_in = c_out


def _mobilenetv2(b: GraphBuilder):
    B = b.batch
    x = b.conv(None, 32, 3, 2, in_shape=TensorShape(B, 3, 224, 224))
    x = b.same(K.BATCHNORM, x)
    x = b.same(K.RELU, x)
    c_in = 32
    cfg = [(1, 32, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)]
    for t, c, n, s in cfg:
        for i in range(n):
            stride = s if i == 0 else 1
            inp = x
            if t == 1:
                y = b.conv(x, 0, 3, stride, groups_dw=True)
                y = b.same(K.BATCHNORM, y)
                y = b.same(K.RELU, y)
                y = b.conv(y, c, 1, 1)
                y = b.same(K.BATCHNORM, y)
            else:
                y = b.conv(x, c_in * t, 1, 1)
                y = b.same(K.BATCHNORM, y)
                y = b.same(K.RELU, y)
                y = b.conv(y, 0, 3, stride, groups_dw=True)
                y = b.same(K.RELU, y)
                y = b.conv(y, c, 1, 1)
            if stride == 1 and c_in == c:
                y = b.same(K.ADD, y, inp)
            x = y
            c_in = c
    x = b.conv(x, 1280, 1, 1)
    x = b.same(K.BATCHNORM, x)
    x = b.same(K.RELU, x)
    x = b.pool(x, global_=True)
    x = b.reshape(x, (B, 1280, 1, 1))
    b.linear(x, 1000)


def _mobilenetv3_small(b: GraphBuilder):
    B = b.batch
    x = b.conv(None, 16, 3, 2, in_shape=TensorShape(B, 3, 224, 224))
    x = b.same(K.BATCHNORM, x)
    x = b.same(K.RELU, x)
    c_in = 16
    cfg = [(3, 16, 16, True, 2), (3, 72, 24, False, 2), (3, 88, 24, False, 1), (5, 96, 40, True, 2),
           (5, 240, 40, True, 1), (5, 240, 40, True, 1), (5, 120, 48, True, 1), (5, 144, 48, True, 1),
           (5, 288, 96, True, 2), (5, 576, 96, True, 1), (5, 576, 96, True, 1)]
    for k, exp, c, se, s in cfg:
        inp = x
        y = x
        if exp != c_in:
            y = b.conv(y, exp, 1, 1)
            y = b.same(K.BATCHNORM, y)
            y = b.same(K.RELU, y)
        y = b.conv(y, 0, k, s, groups_dw=True)
        y = b.same(K.BATCHNORM, y)
        y = b.same(K.RELU, y)
        if se:
            # squeeze-excite gate folded into one elementwise scaling op
            y = b.same(K.SIGMOID, y)
        y = b.conv(y, c, 1, 1)
        y = b.same(K.BATCHNORM, y)
        if s == 1 and c_in == c:
            y = b.same(K.ADD, y, inp)
        x = y
        c_in = c
    x = b.conv(x, 576, 1, 1)
    x = b.same(K.BATCHNORM, x)
    x = b.same(K.RELU, x)
    x = b.pool(x, global_=True)
    x = b.reshape(x, (B, 576, 1, 1))
    x = b.linear(x, 1024)
    x = b.same(K.RELU, x)
    x = b.linear(x, 1000)
    b.same(K.SIGMOID, x)


def _vit_b16(b: GraphBuilder):
    B, d = b.batch, 768
    x = b.conv(None, d, 16, 16, in_shape=TensorShape(B, 3, 224, 224))
    x = b.reshape(x, (B, d, 196, 1))
    for _ in range(12):
        y = b.same(K.LAYERNORM, x)
        y = b.same(K.ATTENTION, y)
        y = b.same(K.ADD, y, x)
        y = b.linear(y, 4 * d)  # activation fused
        x = b.linear(y, d)
    x = b.same(K.LAYERNORM, x)
    x = b.pool(x, global_=True)
    b.linear(x, 1000)


def _swin(b: GraphBuilder):
    B = b.batch
    x = b.conv(None, 96, 4, 4, in_shape=TensorShape(B, 3, 224, 224))
    x = b.reshape(x, (B, 96, 56, 56))
    x = b.same(K.LAYERNORM, x)
    x = b.same(K.ADD, x)  # absolute position embedding
    c, h = 96, 56
    for stage, depth in enumerate((2, 2, 6, 2)):
        if stage > 0:
            x = b.reshape(x, (B, 4 * c, h // 2, h // 2))
            x = b.same(K.LAYERNORM, x)
            c, h = 2 * c, h // 2
            x = b.linear(x, c)
        n_win = (h // 7) ** 2
        for _ in range(depth):
            y = b.same(K.LAYERNORM, x)
            y = b.reshape(y, (B * n_win, c, 7, 7))
            y = b.same(K.ATTENTION, y)
            y = b.reshape(y, (B, c, h, h))
            x = b.same(K.ADD, y, x)
            y = b.same(K.LAYERNORM, x)
            y = b.linear(y, 4 * c)
            y = b.linear(y, c)
            x = b.same(K.ADD, y, x)
    x = b.same(K.LAYERNORM, x)
    x = b.pool(x, global_=True)
    x = b.reshape(x, (B, c, 1, 1))
    b.linear(x, 1000)


FAMILIES: dict[str, Callable[[GraphBuilder], None]] = {
    "resnet18-like": _resnet18,
    "mobilenetv3-small-like": _mobilenetv3_small,
    "mobilenetv2-like": _mobilenetv2,
    "vit-b16-like": _vit_b16,
    "swin-like": _swin,
}


def synth_graph(name: str, operators: Optional[int] = None, seed: int = 0, batch: Optional[int] = None) -> ModelGraph:
    """Build fixture family ``name``; ``operators`` (if given) must match the family size."""
    if name not in FAMILIES:
        raise GraphError(f"unknown fixture family {name!r}; choose from {sorted(FAMILIES)}")
    meta = fixture_params()["families"][name]
    b = GraphBuilder(name, _stream(seed, f"fixture:{name}"), batch or meta["batch"])
    FAMILIES[name](b)
    g = b.build()
    expected = operators if operators is not None else meta["operators"]
    if len(g) != expected:
        raise GraphError(f"fixture {name} has {len(g)} operators, expected {expected}")
    return g


# --- random graphs for property tests and the benchmark suite ----------------

_CHAIN_KINDS = [K.CONV2D, K.BATCHNORM, K.RELU, K.POOLING, K.LINEAR, K.ADD, K.SIGMOID, K.ATTENTION]
_CHAIN_P = np.array([0.26, 0.16, 0.16, 0.06, 0.12, 0.08, 0.08, 0.08])


def random_chain(n: int, seed: int, name: Optional[str] = None) -> ModelGraph:
    """Chain of ``n`` shape-consistent operators with mixed kinds and sizes."""
    if n < 1:
        raise ValueError("chain needs at least one operator")
    rng = _stream(seed, "random_chain")
    b = GraphBuilder(name or f"chain{n}-s{seed}", rng)
    c = int(rng.choice([16, 32, 64, 128]))
    h = int(rng.choice([7, 14, 28, 56]))
    x = None
    p = _CHAIN_P / _CHAIN_P.sum()
    for i in range(n):
        kind = _CHAIN_KINDS[int(rng.choice(len(_CHAIN_KINDS), p=p))]
        if i == 0:
            kind = K.CONV2D
        if kind is K.ATTENTION and h * h > 1024:
            kind = K.LINEAR
        if kind is K.POOLING and h < 2:
            kind = K.RELU
        if kind is K.CONV2D:
            c_out = int(rng.choice([16, 32, 64, 128, 256]))
            k = int(rng.choice([1, 3, 3, 5]))
            stride = 2 if (h >= 14 and rng.random() < 0.25) else 1
            if x is None:
                x = b.conv(None, c_out, k, stride, in_shape=TensorShape(1, c, h, h))
            else:
                x = b.conv(x, c_out, k, stride)
        elif kind is K.LINEAR:
            x = b.linear(x, int(rng.choice([32, 64, 128, 256])))
        elif kind is K.POOLING:
            x = b.pool(x, 2)
        else:
            x = b.same(kind, x)
        h = b.shape(x).height
    return b.build()


def random_dag(n: int, seed: int, extra_edge_p: float = 0.3) -> ModelGraph:
    """A random chain plus skip edges between shape-compatible operators."""
    base = random_chain(n, seed, name=f"dag{n}-s{seed}")
    rng = _stream(seed, "random_dag")
    edges = set(base.edges)
    nodes = base.nodes
    for j in range(2, len(nodes)):
        if rng.random() >= extra_edge_p:
            continue
        cands = [i for i in range(j - 1) if nodes[i].output_shape == nodes[j].input_shape
                 and nodes[j].kind is not K.RESHAPE]
        if cands:
            edges.add((nodes[int(rng.choice(cands))].id, nodes[j].id))
    return ModelGraph(base.name, nodes, tuple(sorted(edges, key=lambda e: (e[1], e[0]))))


def benchmark_suite(n_graphs: int = 10, max_ops: int = 12, seed: int = 2024) -> list[ModelGraph]:
    """Fixed suite of random chains used for scheduler comparisons."""
    rng = _stream(seed, "suite")
    sizes = rng.integers(max(4, max_ops - 4), max_ops + 1, size=n_graphs)
    return [random_chain(int(k), seed * 100 + i, name=f"suite{i:02d}") for i, k in enumerate(sizes)]
