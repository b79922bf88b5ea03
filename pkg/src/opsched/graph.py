"""Operator graphs and per-operator features (sparsity, intensity, shapes)."""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

INT64_MAX = 2**63 - 1
FLOAT_BYTES = 4


class GraphError(ValueError):
    """Structured graph validation / parse failure."""

    def __init__(self, message: str, node_id: Optional[int] = None):
        self.node_id = node_id
        prefix = f"node {node_id}: " if node_id is not None else ""
        super().__init__(prefix + message)


class OperatorKind(str, enum.Enum):
    CONV2D = "Conv2d"
    LINEAR = "Linear"
    BATCHNORM = "BatchNorm"
    LAYERNORM = "LayerNorm"
    RELU = "ReLU"
    SIGMOID = "Sigmoid"
    POOLING = "Pooling"
    ATTENTION = "Attention"
    ADD = "Add"
    RESHAPE = "Reshape"

    @property
    def compute_intensive(self) -> bool:
        return self in _HEAVY

    @classmethod
    def parse(cls, name: str) -> "OperatorKind":
        try:
            return cls(name)
        except ValueError:
            raise GraphError(f"unknown operator kind {name!r}") from None


_HEAVY = frozenset({OperatorKind.CONV2D, OperatorKind.LINEAR, OperatorKind.ATTENTION})


class Quadrant(str, enum.Enum):
    Q1 = "Q1"  # low sparsity, high intensity
    Q2 = "Q2"  # high sparsity, high intensity
    Q3 = "Q3"  # low sparsity, low intensity
    Q4 = "Q4"  # high sparsity, low intensity


@dataclass(frozen=True)
class TensorShape:
    batch: int
    channels: int
    height: int
    width: int

    def __post_init__(self):
        for name in ("batch", "channels", "height", "width"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise GraphError(f"tensor dimension {name}={v!r} must be an integer >= 1")
        if self.numel > INT64_MAX:
            raise GraphError("tensor element count overflows 64 bits")

    @property
    def numel(self) -> int:
        return self.batch * self.channels * self.height * self.width

    def as_list(self) -> list[int]:
        return [self.batch, self.channels, self.height, self.width]

    @classmethod
    def of(cls, dims: Sequence[int]) -> "TensorShape":
        if len(dims) != 4:
            raise GraphError(f"shape needs 4 dims [B,C,H,W], got {list(dims)}")
        return cls(*(int(d) for d in dims))


@dataclass(frozen=True)
class Kernel:
    kh: int
    kw: int
    c_in: int
    c_out: int

    def as_list(self) -> list[int]:
        return [self.kh, self.kw, self.c_in, self.c_out]


def sparsity(tensor, zero_eps: float = 0.0) -> float:
    """Fraction of elements whose magnitude is not above ``zero_eps``."""
    a = np.asarray(tensor, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("empty tensor")
    nonzero = np.count_nonzero(np.abs(a) > zero_eps)
    return 1.0 - nonzero / a.size


def _checked_product(factors: Iterable[int]) -> int:
    out = 1
    for f in factors:
        out *= int(f)
        if out > INT64_MAX:
            raise OverflowError("intensity overflow")
    return out


def conv_intensity(kernel: Sequence[int], out_spatial: Sequence[int]) -> int:
    """Multiply-accumulate count Kh*Kw*Cin*Cout*H*W of a convolution (output H, W)."""
    factors = list(kernel) + list(out_spatial)
    if len(factors) != 6 or any(int(f) < 1 for f in factors):
        raise ValueError(f"conv_intensity needs six factors >= 1, got {factors}")
    return _checked_product(factors)


def default_intensity(kind: OperatorKind, in_shape: TensorShape, out_shape: TensorShape,
                      kernel: Optional[Kernel] = None, pool_area: int = 4) -> int:
    """Work estimate for any operator kind; Conv2d uses ``conv_intensity``."""
    b = out_shape.batch
    if kind is OperatorKind.CONV2D:
        if kernel is None:
            raise GraphError("Conv2d requires a kernel")
        return b * conv_intensity(kernel.as_list(), (out_shape.height, out_shape.width))
    if kind is OperatorKind.LINEAR:
        # H*W acts as a token count; plain fully connected layers have H = W = 1.
        return _checked_product([b, in_shape.height * in_shape.width, in_shape.channels, out_shape.channels])
    if kind is OperatorKind.ATTENTION:
        tokens = in_shape.height * in_shape.width
        d = in_shape.channels
        return 2 * b * tokens * tokens * d + 4 * b * tokens * d * d
    if kind is OperatorKind.POOLING:
        return in_shape.numel * pool_area
    if kind is OperatorKind.RESHAPE:
        return 0
    return out_shape.numel


def classify_quadrant(rho: float, intensity: float, rho_thresh: float, intensity_thresh: float) -> Quadrant:
    high_s = rho > rho_thresh
    high_i = intensity > intensity_thresh
    if high_s:
        return Quadrant.Q2 if high_i else Quadrant.Q4
    return Quadrant.Q1 if high_i else Quadrant.Q3


@dataclass(frozen=True)
class OperatorNode:
    id: int
    kind: OperatorKind
    input_shape: TensorShape
    output_shape: TensorShape
    sparsity: float
    intensity: int
    weight_bytes: int = 0
    kernel: Optional[Kernel] = None
    intensity_override: bool = False

    def __post_init__(self):
        if not 0.0 <= self.sparsity <= 1.0 or math.isnan(self.sparsity):
            raise GraphError(f"sparsity {self.sparsity} outside [0, 1]", self.id)
        if self.intensity < 0:
            raise GraphError(f"intensity {self.intensity} < 0", self.id)
        if self.intensity == 0 and self.kind is not OperatorKind.RESHAPE:
            raise GraphError("zero intensity is only allowed for Reshape", self.id)
        if (self.kernel is not None) != (self.kind is OperatorKind.CONV2D):
            raise GraphError("kernel must be present exactly for Conv2d", self.id)
        if self.weight_bytes < 0:
            raise GraphError("weight_bytes < 0", self.id)

    @property
    def activation_bytes(self) -> int:
        """Bytes of input plus output activations (float32)."""
        return FLOAT_BYTES * (self.input_shape.numel + self.output_shape.numel)

    @property
    def output_bytes(self) -> int:
        return FLOAT_BYTES * self.output_shape.numel

    @property
    def input_bytes(self) -> int:
        return FLOAT_BYTES * self.input_shape.numel


def make_node(id: int, kind: OperatorKind | str, in_shape, out_shape, sparsity: float = 0.0,
              kernel=None, weight_bytes: Optional[int] = None, intensity: Optional[int] = None) -> OperatorNode:
    """Build a node, deriving intensity and weight bytes when not given."""
    kind = OperatorKind.parse(kind) if isinstance(kind, str) else kind
    in_shape = in_shape if isinstance(in_shape, TensorShape) else TensorShape.of(in_shape)
    out_shape = out_shape if isinstance(out_shape, TensorShape) else TensorShape.of(out_shape)
    if kernel is not None and not isinstance(kernel, Kernel):
        kernel = Kernel(*(int(k) for k in kernel))
    override = intensity is not None
    try:
        if intensity is None:
            intensity = default_intensity(kind, in_shape, out_shape, kernel)
    except OverflowError as exc:
        raise GraphError(str(exc), id) from None
    if weight_bytes is None:
        weight_bytes = FLOAT_BYTES * _default_weights(kind, in_shape, out_shape, kernel)
    return OperatorNode(int(id), kind, in_shape, out_shape, float(sparsity), int(intensity),
                        int(weight_bytes), kernel, override)


def _default_weights(kind, in_shape, out_shape, kernel) -> int:
    if kind is OperatorKind.CONV2D:
        return kernel.kh * kernel.kw * kernel.c_in * kernel.c_out + kernel.c_out
    if kind is OperatorKind.LINEAR:
        return in_shape.channels * out_shape.channels + out_shape.channels
    if kind is OperatorKind.ATTENTION:
        d = in_shape.channels
        return 4 * d * d + 4 * d
    if kind in (OperatorKind.BATCHNORM, OperatorKind.LAYERNORM):
        return 2 * out_shape.channels
    return 0


@dataclass(frozen=True)
class ModelGraph:
    name: str
    nodes: tuple[OperatorNode, ...]
    edges: tuple[tuple[int, int], ...]
    _index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple((int(a), int(b)) for a, b in self.edges))
        object.__setattr__(self, "_index", {n.id: i for i, n in enumerate(self.nodes)})
        self._validate()
        preds = {n.id: [] for n in self.nodes}
        for a, b in self.edges:
            preds[b].append(a)
        object.__setattr__(self, "_preds", {k: tuple(v) for k, v in preds.items()})

    def _validate(self):
        if not self.nodes:
            raise GraphError("graph has no nodes")
        if len(self._index) != len(self.nodes):
            seen = set()
            for n in self.nodes:
                if n.id in seen:
                    raise GraphError("duplicate node id", n.id)
                seen.add(n.id)
        seen_edges = set()
        for a, b in self.edges:
            for v in (a, b):
                if v not in self._index:
                    raise GraphError("edge references unknown node", v)
            if a == b:
                raise GraphError("self loop", a)
            if (a, b) in seen_edges:
                raise GraphError(f"duplicate edge ({a}, {b})", b)
            seen_edges.add((a, b))
        cycle_node = _find_cycle(self._index.keys(), self.edges)
        if cycle_node is not None:
            raise GraphError("cycle detected", cycle_node)
        for a, b in self.edges:
            if self._index[a] >= self._index[b]:
                raise GraphError(f"node order is not topological (edge {a} -> {b})", b)
            pa, pb = self.node(a), self.node(b)
            if pa.output_shape.numel != pb.input_shape.numel:
                raise GraphError(
                    f"shape mismatch on edge {a} -> {b}: {pa.output_shape.as_list()} vs {pb.input_shape.as_list()}", b)
            if pb.kind is not OperatorKind.RESHAPE and pa.kind is not OperatorKind.RESHAPE \
                    and pa.output_shape != pb.input_shape:
                raise GraphError(
                    f"shape mismatch on edge {a} -> {b}: {pa.output_shape.as_list()} vs {pb.input_shape.as_list()}", b)

    def __len__(self):
        return len(self.nodes)

    def node(self, node_id: int) -> OperatorNode:
        return self.nodes[self._index[node_id]]

    def position(self, node_id: int) -> int:
        return self._index[node_id]

    def predecessors(self, node_id: int) -> tuple[int, ...]:
        return self._preds[node_id]

    @property
    def is_chain(self) -> bool:
        ids = [n.id for n in self.nodes]
        expected = set(zip(ids[:-1], ids[1:]))
        return set(self.edges) == expected

    @property
    def total_intensity(self) -> int:
        return sum(n.intensity for n in self.nodes)

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            d = {"id": n.id, "kind": n.kind.value, "in_shape": n.input_shape.as_list(),
                 "out_shape": n.output_shape.as_list()}
            if n.kernel is not None:
                d["kernel"] = n.kernel.as_list()
            d["sparsity"] = n.sparsity
            if n.intensity_override:
                d["intensity"] = n.intensity
            d["weight_bytes"] = n.weight_bytes
            nodes.append(d)
        return {"name": self.name, "nodes": nodes, "edges": [list(e) for e in self.edges]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _find_cycle(ids, edges) -> Optional[int]:
    adj = {i: [] for i in ids}
    indeg = {i: 0 for i in ids}
    for a, b in edges:
        adj[a].append(b)
        indeg[b] += 1
    stack = [i for i, d in indeg.items() if d == 0]
    visited = 0
    while stack:
        v = stack.pop()
        visited += 1
        for w in adj[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                stack.append(w)
    if visited == len(indeg):
        return None
    return min(i for i, d in indeg.items() if d > 0)


_NODE_KEYS = {"id", "kind", "in_shape", "out_shape", "kernel", "sparsity", "intensity", "weight_bytes"}
_GRAPH_KEYS = {"name", "nodes", "edges"}


def graph_from_dict(doc: dict) -> ModelGraph:
    if not isinstance(doc, dict):
        raise GraphError("graph document must be an object")
    extra = set(doc) - _GRAPH_KEYS
    if extra:
        raise GraphError(f"unknown top-level keys {sorted(extra)}")
    for key in ("nodes", "edges"):
        if key not in doc:
            raise GraphError(f"missing top-level key {key!r}")
    nodes = []
    for raw in doc["nodes"]:
        nid = raw.get("id") if isinstance(raw, dict) else None
        if not isinstance(raw, dict):
            raise GraphError("node entry must be an object")
        extra = set(raw) - _NODE_KEYS
        if extra:
            raise GraphError(f"unknown node keys {sorted(extra)}", nid)
        for key in ("id", "kind", "in_shape", "out_shape"):
            if key not in raw:
                raise GraphError(f"missing node key {key!r}", nid)
        try:
            nodes.append(make_node(raw["id"], raw["kind"], raw["in_shape"], raw["out_shape"],
                                   sparsity=raw.get("sparsity", 0.0), kernel=raw.get("kernel"),
                                   weight_bytes=raw.get("weight_bytes"), intensity=raw.get("intensity")))
        except GraphError as exc:
            if exc.node_id is None:
                raise GraphError(str(exc), nid) from None
            raise
        except (TypeError, ValueError) as exc:
            raise GraphError(str(exc), nid) from None
    edges = []
    for e in doc["edges"]:
        if not isinstance(e, (list, tuple)) or len(e) != 2:
            raise GraphError(f"edge must be a [from, to] pair, got {e!r}")
        edges.append((int(e[0]), int(e[1])))
    return ModelGraph(str(doc.get("name", "graph")), tuple(nodes), tuple(edges))


def load_graph(path) -> ModelGraph:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphError(f"cannot parse {path}: {exc}") from None
    return graph_from_dict(doc)


def save_graph(graph: ModelGraph, path) -> None:
    Path(path).write_text(json.dumps(graph.to_dict(), indent=1, sort_keys=True), encoding="utf-8")


def chain_graph(nodes: Sequence[OperatorNode], name: str = "chain") -> ModelGraph:
    ids = [n.id for n in nodes]
    return ModelGraph(name, tuple(nodes), tuple(zip(ids[:-1], ids[1:])))


# --- feature vectors ---------------------------------------------------------

FEATURE_NAMES = ("sparsity", "log10_intensity", "batch", "c_in", "height", "width")


def raw_features(node: OperatorNode) -> np.ndarray:
    """[rho, log10 I, B, C_in, H, W] before normalisation (input-tensor dims)."""
    s = node.input_shape
    return np.array([node.sparsity, math.log10(max(node.intensity, 1)),
                     s.batch, s.channels, s.height, s.width], dtype=np.float64)


@dataclass(frozen=True)
class FeatureScaler:
    """Min-max bounds per feature component; sparsity is passed through."""
    lo: tuple
    hi: tuple

    @classmethod
    def fit(cls, rows) -> "FeatureScaler":
        a = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        return cls(tuple(a.min(axis=0)), tuple(a.max(axis=0)))

    @classmethod
    def identity(cls) -> "FeatureScaler":
        return cls((0.0, 0.0, 1.0, 1.0, 1.0, 1.0), (1.0, 1.0, 2.0, 2.0, 2.0, 2.0))

    def transform(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        lo = np.asarray(self.lo)
        span = np.asarray(self.hi) - lo
        span = np.where(span > 0, span, 1.0)
        out = (raw - lo) / span
        out[..., 0] = raw[..., 0]
        return out

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, d) -> "FeatureScaler":
        return cls(tuple(d["lo"]), tuple(d["hi"]))


def feature_vector(node: OperatorNode, scaler: Optional[FeatureScaler] = None) -> np.ndarray:
    raw = raw_features(node)
    return raw if scaler is None else scaler.transform(raw)
