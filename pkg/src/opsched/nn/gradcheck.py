"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, step: float = 1e-4) -> np.ndarray:
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = fn().item()
        flat[i] = old - step
        down = fn().item()
        flat[i] = old
        gf[i] = (up - down) / (2 * step)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = 1e-4,
                    atol: float = 1e-7) -> float:
    """Worst relative error between backprop and central differences.

    Entries where both gradients are below ``atol`` in magnitude are ignored
    (they are dominated by finite-difference rounding noise).
    """
    for t in tensors:
        t.zero_grad()
    loss = fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        a = t.grad.copy()
        n = numeric_grad(fn, t, step)
        mask = (np.abs(a) > atol) | (np.abs(n) > atol)
        if mask.any():
            worst = max(worst, relative_error(a[mask], n[mask]))
    return worst
