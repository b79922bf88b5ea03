"""Operator-placement MDP: one episode walks the graph in topological order."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..cost import HardwareProfile, op_latency, transfer_latency
from ..graph import ModelGraph
from ..plan import EPS_PIN, Placement, SchedulePlan, placement_for
from ..sim import Simulator

STATE_DIM = 7
STATE_FIELDS = ("rho", "intensity", "n_in", "n_out", "m_gpu", "m_cpu", "o_switch")
DEFAULT_WEIGHTS = (1.0, 0.1, 0.01)


class EpisodeDone(RuntimeError):
    pass


def reward(latency: float, m_gpu: float, m_cpu: float, o_switch: float,
           l1: float = 1.0, l2: float = 0.1, l3: float = 0.01) -> float:
    if min(l1, l2, l3) < 0:
        raise ValueError("reward weights must be non-negative")
    return -(l1 * latency + l2 * (m_gpu + m_cpu) + l3 * o_switch)


@dataclass
class StepInfo:
    latency: float      # makespan increase this step (s)
    overhead: float     # transfer + switch time incurred this step (s)
    placement: Placement


def _log_unit(x: float, decades: float) -> float:
    return min(1.0, math.log10(1.0 + max(x, 0.0)) / decades)


class SchedulingEnv:
    """Gym-like environment; ``step`` takes the GPU proportion ``a`` in [0, 1]."""

    def __init__(self, graph: ModelGraph, profile: HardwareProfile, batch: float = 1,
                 weights=DEFAULT_WEIGHTS, eps_pin: float = EPS_PIN, co_execution: str = "split"):
        self.graph = graph
        self.profile = profile
        self.batch = float(batch)
        self.weights = tuple(float(w) for w in weights)
        self.eps_pin = eps_pin
        self.co_execution = co_execution
        scale = self.batch
        gpu_total = sum(op_latency(n, profile.gpu, scale).latency for n in graph.nodes)
        self.lat_ref = gpu_total / len(graph.nodes)
        self._mem = [op_latency(n, profile.gpu, scale).mem_required / profile.gpu.mem_capacity
                     for n in graph.nodes]
        self._change = [profile.switch_overhead + (transfer_latency(n.input_bytes * scale, profile)
                                                   if i else 0.0)
                        for i, n in enumerate(graph.nodes)]
        self._static = np.array([[n.sparsity,
                                  _log_unit(n.intensity * scale, 12.0),
                                  _log_unit(n.input_shape.numel * scale, 9.0),
                                  _log_unit(n.output_shape.numel * scale, 9.0)] for n in graph.nodes])
        self.sim: Optional[Simulator] = None
        self.t = 0
        self.done = True

    @property
    def n_steps(self) -> int:
        return len(self.graph.nodes)

    def reset(self) -> np.ndarray:
        self.sim = Simulator(self.graph, self.profile, self.batch, self.co_execution, check_memory=False)
        self.t = 0
        self.done = False
        self.m_gpu = 0.0
        self.prev_xi: Optional[float] = None
        self.placements: list[Placement] = []
        return self.state()

    def _m_cpu(self) -> float:
        span = self.sim.makespan
        return min(1.0, self.sim.busy["CPU"] / span) if span > 0 else 0.0

    def state(self) -> np.ndarray:
        s = np.empty(STATE_DIM)
        i = min(self.t, self.n_steps - 1)
        s[:4] = self._static[i]
        s[4] = min(1.0, self.m_gpu)
        s[5] = self._m_cpu()
        if self.prev_xi is None:
            s[6] = 0.5
        else:
            c = self._change[i]
            o = c / (c + self.lat_ref) if c + self.lat_ref > 0 else 0.0
            s[6] = 0.5 + 0.5 * (2.0 * self.prev_xi - 1.0) * (0.5 + 0.5 * o)
        return s

    def step(self, a: float):
        if self.done:
            raise EpisodeDone("step() called after the episode finished; call reset()")
        node = self.graph.nodes[self.t]
        p = placement_for(node.id, a, self.eps_pin)
        before_span = self.sim.makespan
        before_m = min(1.0, self.m_gpu) + self._m_cpu()
        before_o = self.sim.phase["transfer"] + self.sim.phase["switch"]
        self.sim.place(node, p)
        if p.mode != "CPU":
            self.m_gpu += self._mem[self.t] * (1.0 if p.mode == "GPU" else 1.0 - p.xi)
        self.placements.append(p)
        self.prev_xi = p.xi
        dl = self.sim.makespan - before_span
        do = self.sim.phase["transfer"] + self.sim.phase["switch"] - before_o
        dm = min(1.0, self.m_gpu) + self._m_cpu() - before_m
        l1, l2, l3 = self.weights
        r = reward(dl / self.lat_ref, dm, 0.0, do / self.lat_ref, l1, l2, l3)
        self.t += 1
        self.done = self.t >= self.n_steps
        return self.state(), r, self.done, StepInfo(dl, do, p)

    def plan(self, scheduler: str = "sac", **kw) -> SchedulePlan:
        if not self.done:
            raise RuntimeError("episode not finished")
        return SchedulePlan(tuple(self.placements), scheduler, **kw)
