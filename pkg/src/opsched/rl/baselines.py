"""Non-learned schedulers."""
from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from ..cost import HardwareProfile, op_latency
from ..graph import GraphError, ModelGraph
from ..kernels import dp_chain
from ..plan import SchedulePlan
from ..sim import chain_arrays

Thresholds = Union[tuple[float, float], Sequence[tuple[float, float]]]


def _ids(graph: ModelGraph) -> list[int]:
    return [n.id for n in graph.nodes]


def cpu_only(graph: ModelGraph) -> SchedulePlan:
    return SchedulePlan.from_devices(_ids(graph), ["CPU"] * len(graph.nodes), "cpu_only")


def gpu_only(graph: ModelGraph) -> SchedulePlan:
    return SchedulePlan.from_devices(_ids(graph), ["GPU"] * len(graph.nodes), "gpu_only")


def _faster_device(node, profile: HardwareProfile, scale: float) -> str:
    c = op_latency(node, profile.cpu, scale).latency
    g = op_latency(node, profile.gpu, scale).latency
    return "GPU" if g < c else "CPU"


def greedy_schedule(graph: ModelGraph, profile: HardwareProfile, batch: float = 1) -> SchedulePlan:
    """Per-operator fastest device, transfer costs ignored; CPU wins ties."""
    return SchedulePlan.from_devices(_ids(graph), [_faster_device(n, profile, batch) for n in graph.nodes],
                                     "greedy")


def dp_schedule(graph: ModelGraph, profile: HardwareProfile, batch: float = 1,
                allow_dag: bool = False) -> SchedulePlan:
    """Optimal two-device assignment for chains; on DAGs (``allow_dag``) a heuristic over topological order."""
    if not graph.is_chain and not allow_dag:
        raise GraphError(f"graph {graph.name!r} is not a chain; pass allow_dag=True for the heuristic")
    _, assign = dp_chain(*chain_arrays(graph, profile, batch))
    return SchedulePlan.from_devices(_ids(graph), assign, "dp")


def static_threshold_schedule(graph: ModelGraph, profile: HardwareProfile, thresholds: Thresholds,
                              batch: float = 1) -> SchedulePlan:
    """CPU for sparse-and-light operators, GPU for dense-and-heavy, cost model for the rest."""
    th = np.asarray(thresholds, dtype=float)
    if th.shape == (2,):
        th = np.tile(th, (len(graph.nodes), 1))
    if th.shape != (len(graph.nodes), 2):
        raise ValueError(f"expected one (s, c) pair or one per operator, got shape {th.shape}")
    devices = []
    for node, (s_hat, c_hat) in zip(graph.nodes, th):
        sparse = node.sparsity > s_hat
        light = node.intensity * batch <= c_hat
        if sparse and light:
            devices.append("CPU")
        elif not sparse and not light:
            devices.append("GPU")
        else:
            devices.append(_faster_device(node, profile, batch))
    return SchedulePlan.from_devices(_ids(graph), devices, "static")
