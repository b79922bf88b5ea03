"""Parametric roofline cost model standing in for the CPU/GPU hardware."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional

from .graph import OperatorNode

PROFILE_DIR_ENV = "SPAROA_PROFILE_DIR"


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    peak_throughput: float      # FLOP/s
    mem_bandwidth: float        # B/s
    mem_capacity: float         # B
    sparsity_exploitation: float
    launch_overhead: float      # s
    active_power: float         # W
    idle_power: float           # W

    def __post_init__(self):
        if self.name not in ("CPU", "GPU"):
            raise ProfileError(f"device name must be CPU or GPU, got {self.name!r}")
        for f in ("peak_throughput", "mem_bandwidth", "mem_capacity"):
            if not getattr(self, f) > 0:
                raise ProfileError(f"{self.name}.{f} must be > 0")
        if not 0.0 <= self.sparsity_exploitation <= 1.0:
            raise ProfileError(f"{self.name}.sparsity_exploitation outside [0, 1]")
        if self.launch_overhead < 0:
            raise ProfileError(f"{self.name}.launch_overhead < 0")
        if not self.active_power >= self.idle_power >= 0:
            raise ProfileError(f"{self.name}: need active_power >= idle_power >= 0")


@dataclass(frozen=True)
class HardwareProfile:
    name: str
    cpu: DeviceProfile
    gpu: DeviceProfile
    transfer_bandwidth: float
    transfer_latency_fixed: float
    switch_overhead: float
    overlap_factor: float

    def __post_init__(self):
        if not self.transfer_bandwidth > 0:
            raise ProfileError("transfer_bandwidth must be > 0")
        if self.transfer_latency_fixed < 0 or self.switch_overhead < 0:
            raise ProfileError("transfer_latency_fixed and switch_overhead must be >= 0")
        if not 0.0 <= self.overlap_factor <= 1.0:
            raise ProfileError("overlap_factor outside [0, 1]")

    def device(self, name: str) -> DeviceProfile:
        return self.cpu if name == "CPU" else self.gpu

    def with_(self, **changes) -> "HardwareProfile":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {"name": self.name}
        for dev in ("cpu", "gpu"):
            d[dev] = {k: v for k, v in asdict(getattr(self, dev)).items() if k != "name"}
        d["transfer"] = {"bandwidth": self.transfer_bandwidth, "latency_fixed": self.transfer_latency_fixed,
                         "switch_overhead": self.switch_overhead, "overlap_factor": self.overlap_factor}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareProfile":
        allowed = {"name", "cpu", "gpu", "transfer", "notes"}
        extra = set(d) - allowed
        if extra:
            raise ProfileError(f"unknown profile keys {sorted(extra)}")
        try:
            cpu = DeviceProfile("CPU", **d["cpu"])
            gpu = DeviceProfile("GPU", **d["gpu"])
            t = d["transfer"]
            return cls(d.get("name", "custom"), cpu, gpu, t["bandwidth"], t["latency_fixed"],
                       t["switch_overhead"], t["overlap_factor"])
        except (KeyError, TypeError) as exc:
            raise ProfileError(f"malformed profile: {exc}") from None


@dataclass(frozen=True)
class CostEstimate:
    compute_time: float
    memory_time: float
    latency: float
    energy: float
    mem_required: float


def op_latency(node: OperatorNode, device: DeviceProfile, scale: float = 1.0,
               work_share: float = 1.0) -> CostEstimate:
    """Roofline latency of ``node`` on ``device``.

    ``scale`` multiplies FLOPs and activation bytes (batch scaling);
    ``work_share`` is the fraction of the operator executed on this device
    (weights are always needed in full).
    """
    flops = node.intensity * scale * work_share
    effective = flops * (1.0 - device.sparsity_exploitation * node.sparsity)
    compute_time = effective / device.peak_throughput
    mem = node.weight_bytes + node.activation_bytes * scale * work_share
    memory_time = mem / device.mem_bandwidth
    latency = max(compute_time, memory_time) + device.launch_overhead
    return CostEstimate(compute_time, memory_time, latency, latency * device.active_power, mem)


def effective_flops(node: OperatorNode, device: DeviceProfile, scale: float = 1.0) -> float:
    return node.intensity * scale * (1.0 - device.sparsity_exploitation * node.sparsity)


def transfer_latency(nbytes: float, profile: HardwareProfile, overlappable: bool = True) -> float:
    if nbytes < 0:
        raise ValueError("negative transfer size")
    raw = profile.transfer_latency_fixed + nbytes / profile.transfer_bandwidth
    return raw * (1.0 - profile.overlap_factor) if overlappable else raw


# --- profile files -----------------------------------------------------------

def _search_dirs() -> list[Path]:
    dirs = []
    env = os.environ.get(PROFILE_DIR_ENV)
    if env:
        dirs.extend(Path(p) for p in env.split(os.pathsep) if p)
    return dirs


def load_profile(name_or_path: str) -> HardwareProfile:
    """Load a profile by file path, by name on ``SPAROA_PROFILE_DIR``, or a shipped default."""
    p = Path(name_or_path)
    if p.suffix == ".json" and p.exists():
        return HardwareProfile.from_dict(json.loads(p.read_text(encoding="utf-8")))
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    for d in _search_dirs():
        cand = d / f"{stem}.json"
        if cand.exists():
            return HardwareProfile.from_dict(json.loads(cand.read_text(encoding="utf-8")))
    try:
        text = resources.files("opsched.profiles").joinpath(f"{stem}.json").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ProfileError(f"unknown hardware profile {name_or_path!r}") from None
    return HardwareProfile.from_dict(json.loads(text))


def default_profiles() -> dict[str, HardwareProfile]:
    return {name: load_profile(name) for name in ("orin_nano", "agx_orin")}


def uniform_profile(throughput: float = 1e9, kappa_cpu: float = 1.0, kappa_gpu: float = 0.0,
                    ratio: float = 1.0, bandwidth: float = 1e30, overhead: float = 0.0,
                    transfer_bandwidth: float = 1e30, switch: float = 0.0,
                    overlap: float = 0.0, name: Optional[str] = None) -> HardwareProfile:
    """Synthetic profile: GPU throughput = ``ratio`` x CPU throughput."""
    def dev(n, peak, kappa):
        return DeviceProfile(n, peak, bandwidth, 1e15, kappa, overhead, 10.0, 1.0)
    return HardwareProfile(name or f"synthetic_r{ratio:g}", dev("CPU", throughput, kappa_cpu),
                           dev("GPU", throughput * ratio, kappa_gpu), transfer_bandwidth, 0.0, switch, overlap)
