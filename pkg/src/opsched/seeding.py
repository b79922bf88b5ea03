"""Named random streams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np


def derive_seed(master: int, name: str) -> int:
    """Stable 32-bit child seed for consumer ``name``; independent of other consumers."""
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1)[0])


def stream(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, name))
