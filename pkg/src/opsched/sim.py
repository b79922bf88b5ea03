"""Discrete-event CPU/GPU co-execution of a schedule plan over the cost model."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .cost import HardwareProfile, op_latency, transfer_latency
from .graph import ModelGraph, OperatorNode
from .plan import Placement, SchedulePlan

PHASES = ("cpu_compute", "gpu_compute", "transfer", "switch", "aggregation")
DEVICES = ("CPU", "GPU")
COMBINE_PASSES = 3  # read both partial results, write the blend


class SimulationError(RuntimeError):
    def __init__(self, message: str, op_id: Optional[int] = None):
        self.op_id = op_id
        super().__init__(message if op_id is None else f"operator {op_id}: {message}")


def aggregate(p_cpu, p_gpu, xi: float):
    """Weighted blend of CPU and GPU results; ``xi`` weighs the CPU side."""
    if not 0.0 <= xi <= 1.0:
        raise ValueError(f"xi={xi} outside [0, 1]")
    return xi * np.asarray(p_cpu) + (1.0 - xi) * np.asarray(p_gpu) if isinstance(p_cpu, np.ndarray) \
        or isinstance(p_gpu, np.ndarray) else xi * p_cpu + (1.0 - xi) * p_gpu


@dataclass
class Interval:
    op_id: int
    start: float
    end: float


@dataclass
class TransferInterval:
    op_id: int          # producer whose output moves
    dst: str
    start: float
    end: float
    nbytes: float


@dataclass
class DeviceTimeline:
    intervals: dict = field(default_factory=lambda: {d: [] for d in DEVICES})
    transfers: list = field(default_factory=list)
    peak_mem: dict = field(default_factory=lambda: {d: 0.0 for d in DEVICES})


@dataclass
class SimReport:
    total_latency: float
    breakdown: dict
    energy: float
    gpu_op_share: float
    peak_mem: dict
    busy: dict
    batch: int = 1
    batch_trace: list = field(default_factory=list)
    timeline: Optional[DeviceTimeline] = field(default=None, repr=False)

    def to_dict(self, with_timeline: bool = False) -> dict:
        d = {"total_latency": self.total_latency, "breakdown": dict(self.breakdown), "energy": self.energy,
             "gpu_op_share": self.gpu_op_share, "peak_mem": dict(self.peak_mem), "busy": dict(self.busy),
             "batch": self.batch, "batch_trace": [list(r) for r in self.batch_trace]}
        if with_timeline and self.timeline is not None:
            d["timeline"] = {"intervals": {k: [asdict(i) for i in v] for k, v in self.timeline.intervals.items()},
                             "transfers": [asdict(t) for t in self.timeline.transfers]}
        return d

    def phase_rows(self) -> list[tuple[str, float, float]]:
        return latency_breakdown(self)

    def phase_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phase", "seconds", "share"])
        for name, sec, share in self.phase_rows():
            w.writerow([name, repr(sec), repr(share)])
        return buf.getvalue()


class Simulator:
    """Incremental event-driven simulator; operators are placed in topological order."""

    def __init__(self, graph: ModelGraph, profile: HardwareProfile, batch: float = 1,
                 co_execution: str = "split", check_memory: bool = True):
        if batch < 1:
            raise ValueError("batch must be >= 1")
        if co_execution not in ("split", "duplicate"):
            raise ValueError(f"unknown co_execution mode {co_execution!r}")
        self.graph = graph
        self.profile = profile
        self.scale = float(batch)
        self.co_execution = co_execution
        self.check_memory = check_memory
        self.free = {d: 0.0 for d in DEVICES}
        self.busy = {d: 0.0 for d in DEVICES}
        self.link_free = 0.0
        self.end: dict[int, float] = {}
        self.loc: dict[int, str] = {}
        self.moved: dict[tuple[int, str], float] = {}
        self.prev_devices: Optional[tuple] = None
        self.phase = {p: 0.0 for p in PHASES}
        self.weights = {d: 0.0 for d in DEVICES}
        self.peak_act = {d: 0.0 for d in DEVICES}
        self.timeline = DeviceTimeline()
        self.makespan = 0.0
        self.placed = 0
        self.gpu_major = 0
        self.switches = 0

    # --- helpers ------------------------------------------------------------
    def _arrival(self, u: int, dev: str) -> float:
        if self.loc[u] == dev:
            return self.end[u]
        key = (u, dev)
        if key in self.moved:
            return self.moved[key]
        nbytes = self.graph.node(u).output_bytes * self.scale
        dur = transfer_latency(nbytes, self.profile, overlappable=True)
        t0 = max(self.end[u], self.link_free)
        t1 = t0 + dur
        self.link_free = t1
        self.phase["transfer"] += dur
        self.timeline.transfers.append(TransferInterval(u, dev, t0, t1, nbytes))
        self.moved[key] = t1
        return t1

    def _ready(self, node: OperatorNode, dev: str) -> float:
        t = 0.0
        for u in self.graph.predecessors(node.id):
            t = max(t, self._arrival(u, dev))
        return t

    def _reserve(self, node: OperatorNode, dev: str, share: float):
        d = self.profile.device(dev)
        act = node.activation_bytes * self.scale * share
        self.weights[dev] += node.weight_bytes
        self.peak_act[dev] = max(self.peak_act[dev], act)
        used = self.weights[dev] + self.peak_act[dev]
        self.timeline.peak_mem[dev] = max(self.timeline.peak_mem[dev], used)
        if self.check_memory and used > d.mem_capacity:
            raise SimulationError(f"{dev} memory high-water mark {used:.3g} B exceeds capacity "
                                  f"{d.mem_capacity:.3g} B", node.id)

    def _run(self, node: OperatorNode, dev: str, ready: float, switch: float, share: float) -> float:
        est = op_latency(node, self.profile.device(dev), self.scale, share)
        start = max(ready, self.free[dev])
        if switch:
            start = start + switch
        end = start + est.latency
        self.free[dev] = end
        self.busy[dev] += est.latency
        self.phase["cpu_compute" if dev == "CPU" else "gpu_compute"] += est.latency
        self.timeline.intervals[dev].append(Interval(node.id, start, end))
        return end

    # --- public -------------------------------------------------------------
    def place(self, node: OperatorNode, p: Placement) -> float:
        """Schedule ``node``; returns its completion time."""
        devs = p.devices
        switch = 0.0
        if self.prev_devices is not None and devs != self.prev_devices:
            switch = self.profile.switch_overhead
            self.phase["switch"] += switch
            self.switches += 1
        self.prev_devices = devs
        if p.mode != "SPLIT":
            dev = devs[0]
            self._reserve(node, dev, 1.0)
            end = self._run(node, dev, self._ready(node, dev), switch, 1.0)
            self.loc[node.id] = dev
        else:
            dup = self.co_execution == "duplicate"
            cpu_share = 1.0 if dup else p.xi
            gpu_share = 1.0 if dup else 1.0 - p.xi
            self._reserve(node, "CPU", cpu_share)
            self._reserve(node, "GPU", gpu_share)
            ready_c = self._ready(node, "CPU")
            ready_g = self._ready(node, "GPU")
            end_c = self._run(node, "CPU", ready_c, switch, cpu_share)
            end_g = self._run(node, "GPU", ready_g, switch, gpu_share)
            nbytes = node.output_bytes * self.scale * cpu_share
            dur = transfer_latency(nbytes, self.profile, overlappable=True)
            t0 = max(end_c, self.link_free)
            t1 = t0 + dur
            self.link_free = t1
            self.phase["transfer"] += dur
            self.timeline.transfers.append(TransferInterval(node.id, "GPU", t0, t1, nbytes))
            comb = COMBINE_PASSES * node.output_bytes * self.scale / self.profile.gpu.mem_bandwidth
            start = max(end_g, t1)
            end = start + comb
            self.free["GPU"] = end
            self.busy["GPU"] += comb
            self.phase["aggregation"] += comb
            self.loc[node.id] = "GPU"
        self.end[node.id] = end
        self.makespan = max(self.makespan, end)
        self.placed += 1
        self.gpu_major += p.gpu_majority
        return end

    def report(self) -> SimReport:
        total = self.makespan
        energy = 0.0
        for dev in DEVICES:
            d = self.profile.device(dev)
            busy = min(self.busy[dev], total) if total > 0 else 0.0
            energy += d.active_power * busy + d.idle_power * (total - busy)
        share = self.gpu_major / self.placed if self.placed else 0.0
        return SimReport(total, dict(self.phase), energy, share, dict(self.timeline.peak_mem),
                         dict(self.busy), int(round(self.scale)), timeline=self.timeline)


def simulate(plan: SchedulePlan, graph: ModelGraph, profile: HardwareProfile, batch: float = 1,
             co_execution: str = "split", check_memory: bool = True) -> SimReport:
    if not plan.covers(graph):
        raise SimulationError("plan does not cover every operator exactly once")
    by_id = plan.by_id()
    sim = Simulator(graph, profile, batch, co_execution, check_memory)
    for node in graph.nodes:
        sim.place(node, by_id[node.id])
    return sim.report()


def latency_breakdown(report: SimReport) -> list[tuple[str, float, float]]:
    """(phase, seconds, share of the serialized phase sum) rows."""
    total = sum(report.breakdown.values())
    return [(p, report.breakdown[p], report.breakdown[p] / total if total > 0 else 0.0) for p in PHASES]


def chain_arrays(graph: ModelGraph, profile: HardwareProfile, batch: float = 1):
    """Per-operator CPU/GPU latency and device-change transfer cost along the node order."""
    scale = float(batch)
    lat_cpu = np.array([op_latency(n, profile.cpu, scale).latency for n in graph.nodes])
    lat_gpu = np.array([op_latency(n, profile.gpu, scale).latency for n in graph.nodes])
    xfer = np.array([0.0] + [transfer_latency(n.input_bytes * scale, profile, overlappable=True)
                             for n in graph.nodes[1:]])
    return lat_cpu, lat_gpu, xfer, profile.switch_overhead


# --- dynamic batching ---------------------------------------------------------

@dataclass
class BatchConfig:
    b0: int = 32
    eta: float = 1e5
    eps: float = 1e-6
    m_max: float = 4e9
    t_real_time: float = 0.1
    b_min: int = 1
    b_max: int = 512
    max_iter: int = 100
    sparsity_threshold: Optional[float] = None
    intensity_threshold: Optional[float] = None

    def __post_init__(self):
        if not 1 <= self.b_min <= self.b0 <= self.b_max <= 512:
            raise ValueError("need 1 <= b_min <= b0 <= b_max <= 512")
        if not (self.eta > 0 and self.eps > 0):
            raise ValueError("eta and eps must be > 0")


def optimize_batch(graph: Optional[ModelGraph], plan: Optional[SchedulePlan], profile: Optional[HardwareProfile],
                   config: BatchConfig, latency_fn: Optional[Callable[[int], float]] = None,
                   memory_fn: Optional[Callable[[int], float]] = None):
    """Gradient-descent batch-size search under memory and real-time limits.

    Returns ``(best_batch, trace)`` where trace rows are (iteration, B, L(B), M(B)).
    ``latency_fn`` / ``memory_fn`` override the simulator (used for synthetic objectives).
    """
    cache: dict[int, tuple[float, float]] = {}

    def evaluate(b: int) -> tuple[float, float]:
        if b not in cache:
            if latency_fn is not None:
                lat = float(latency_fn(b))
                mem = float(memory_fn(b)) if memory_fn is not None else 0.0
            else:
                rep = simulate(plan, graph, profile, batch=b, check_memory=False)
                lat, mem = rep.total_latency, max(rep.peak_mem.values())
                if memory_fn is not None:
                    mem = float(memory_fn(b))
            cache[b] = (lat, mem)
        return cache[b]

    def clamp(b) -> int:
        return int(min(config.b_max, max(config.b_min, int(round(b)))))

    def mem_cap_batch() -> int:
        lo = config.b_min
        if evaluate(lo)[1] > config.m_max:
            return lo
        hi = config.b_max
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if evaluate(mid)[1] <= config.m_max:
                lo = mid
            else:
                hi = mid - 1
        return lo

    mean_rho = float(np.mean([n.sparsity for n in graph.nodes])) if graph is not None else 0.0
    mean_int = float(np.mean([n.intensity for n in graph.nodes])) if graph is not None else 0.0

    b = clamp(config.b0)
    lat, mem = evaluate(b)
    trace = [(0, b, lat, mem)]
    before = None
    for it in range(1, config.max_iter + 1):
        if mem > config.m_max and lat > config.t_real_time:
            nb = clamp(b // 2)
        else:
            db = max(1, int(round(0.1 * b)))
            if b + db <= config.b_max:
                grad = (evaluate(b + db)[0] - lat) / db
            else:
                grad = (lat - evaluate(b - db)[0]) / db
            nb = clamp(b - config.eta * grad)
            if nb == b and grad != 0.0:
                nb = clamp(b - math.copysign(1, grad))
        if config.sparsity_threshold is not None and mean_rho > config.sparsity_threshold:
            nb = clamp(min(2 * nb, mem_cap_batch()))
        elif config.intensity_threshold is not None and mean_int > config.intensity_threshold:
            nb = clamp(nb // 2)
        l_new, m_new = evaluate(nb)
        trace.append((it, nb, l_new, m_new))
        converged = abs(l_new - lat) <= config.eps
        cycled = before is not None and nb == before and nb != b
        prev_b, prev_l = b, lat
        before, b, lat, mem = b, nb, l_new, m_new
        if cycled:
            if prev_l < lat:
                b, lat = prev_b, prev_l
            break
        if converged:
            break
    while evaluate(b)[1] > config.m_max and b > config.b_min:
        b = clamp(b // 2)
    if trace[-1][1] != b:
        lat, mem = evaluate(b)
        trace.append((len(trace), b, lat, mem))
    return b, trace
