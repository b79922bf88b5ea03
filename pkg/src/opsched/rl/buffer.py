from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: float
    r: float
    s2: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring; uniform sampling with replacement."""

    def __init__(self, state_dim: int, capacity: int = 100_000, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, 1))
        self.r = np.zeros((capacity, 1))
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros((capacity, 1))
        self.ids = np.full(capacity, -1, dtype=np.int64)   # insertion counter, for eviction checks
        self.pos = 0
        self.size = 0
        self.count = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, done) -> None:
        i = self.pos
        self.s[i], self.a[i, 0], self.r[i, 0], self.s2[i], self.done[i, 0] = s, a, r, s2, float(done)
        self.ids[i] = self.count
        self.count += 1
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push(self, t: Transition) -> None:
        self.add(t.s, t.a, t.r, t.s2, t.done)

    def contents(self) -> np.ndarray:
        """Insertion ids currently held."""
        return np.sort(self.ids[: self.size])

    def sample(self, batch: int):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, self.size, size=batch)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx]
