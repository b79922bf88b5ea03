"""Schedule plans: one placement per operator."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Optional

EPS_PIN = 0.05


@dataclass(frozen=True)
class Placement:
    op_id: int
    action: float       # GPU proportion in [0, 1]
    mode: str           # "CPU" | "GPU" | "SPLIT"
    xi: float           # CPU weight; 1 for CPU, 0 for GPU, in (0, 1) for SPLIT

    def __post_init__(self):
        if self.mode not in ("CPU", "GPU", "SPLIT"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if (self.mode == "SPLIT") != (0.0 < self.xi < 1.0):
            raise ValueError(f"xi={self.xi} inconsistent with mode {self.mode}")

    @property
    def devices(self) -> tuple[str, ...]:
        return ("CPU", "GPU") if self.mode == "SPLIT" else (self.mode,)

    @property
    def gpu_majority(self) -> bool:
        return self.mode == "GPU" or (self.mode == "SPLIT" and self.xi < 0.5)


def map_action_to_ratios(a: float, eps_pin: float = EPS_PIN) -> tuple[float, str]:
    """GPU proportion ``a`` -> (CPU weight xi = 1 - a, execution mode)."""
    a = min(1.0, max(0.0, float(a)))
    xi = 1.0 - a
    if xi < eps_pin:
        return 0.0, "GPU"
    if xi > 1.0 - eps_pin:
        return 1.0, "CPU"
    return xi, "SPLIT"


def placement_for(op_id: int, a: float, eps_pin: float = EPS_PIN) -> Placement:
    xi, mode = map_action_to_ratios(a, eps_pin)
    return Placement(op_id, min(1.0, max(0.0, float(a))), mode, xi)


def device_placement(op_id: int, device: str) -> Placement:
    return Placement(op_id, 1.0, "GPU", 0.0) if device == "GPU" else Placement(op_id, 0.0, "CPU", 1.0)


@dataclass(frozen=True)
class SchedulePlan:
    placements: tuple[Placement, ...]
    scheduler: str
    seed: Optional[int] = None
    episodes: Optional[int] = None

    @classmethod
    def from_devices(cls, op_ids: Iterable[int], devices: Iterable, scheduler: str, **kw) -> "SchedulePlan":
        names = {0: "CPU", 1: "GPU", "CPU": "CPU", "GPU": "GPU"}
        return cls(tuple(device_placement(i, names[int(d)] if not isinstance(d, str) else d)
                         for i, d in zip(op_ids, devices)), scheduler, **kw)

    def __len__(self):
        return len(self.placements)

    def by_id(self) -> dict[int, Placement]:
        return {p.op_id: p for p in self.placements}

    def covers(self, graph) -> bool:
        ids = [p.op_id for p in self.placements]
        return sorted(ids) == sorted(n.id for n in graph.nodes) and len(set(ids)) == len(ids)

    @property
    def modes(self) -> list[str]:
        return [p.mode for p in self.placements]

    @property
    def gpu_op_share(self) -> float:
        return sum(p.gpu_majority for p in self.placements) / len(self.placements)

    def to_dict(self) -> dict:
        return {"scheduler": self.scheduler, "seed": self.seed, "episodes": self.episodes,
                "placements": [{"op_id": p.op_id, "action": p.action, "mode": p.mode, "xi": p.xi}
                               for p in self.placements]}

    def digest(self) -> str:
        body = json.dumps([[p.op_id, p.mode, round(p.xi, 12)] for p in self.placements])
        return hashlib.sha256(body.encode()).hexdigest()[:16]


def distribution(plan: SchedulePlan) -> float:
    """Share of operators whose work is GPU-majority."""
    return plan.gpu_op_share
