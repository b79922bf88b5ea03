"""Hot loops over operator chains.

A chain is described by per-operator latency arrays for both devices, the cost
of moving an operator's input across devices (``xfer[i]``, unused for i == 0)
and a flat switch overhead. Device codes: 0 = CPU, 1 = GPU.

Every routine accumulates time in exactly the order the simulator does
(``((t + xfer) + switch) + latency``) so results are bit-identical to it.
Each kernel has a numba version and a vectorised numpy version; ``USE_NUMBA``
picks one at import time.
"""
import numpy as np

from ._jit import NUMBA_AVAILABLE, njit

USE_NUMBA = NUMBA_AVAILABLE
MAX_ENUM_OPS = 24


@njit
def _plan_costs_nb(lat_cpu, lat_gpu, xfer, switch, assign):
    m, n = assign.shape
    out = np.empty(m)
    for k in range(m):
        t = 0.0
        for i in range(n):
            d = assign[k, i]
            if i > 0 and d != assign[k, i - 1]:
                t = t + xfer[i]
                t = t + switch
            if d == 0:
                t = t + lat_cpu[i]
            else:
                t = t + lat_gpu[i]
        out[k] = t
    return out


def _plan_costs_np(lat_cpu, lat_gpu, xfer, switch, assign):
    m, n = assign.shape
    t = np.zeros(m)
    for i in range(n):
        d = assign[:, i]
        if i > 0:
            change = d != assign[:, i - 1]
            t = np.where(change, (t + xfer[i]) + switch, t)
        t = t + np.where(d == 0, lat_cpu[i], lat_gpu[i])
    return t


@njit
def _dp_chain_nb(lat_cpu, lat_gpu, xfer, switch):
    n = lat_cpu.shape[0]
    cost = np.empty((n, 2))
    back = np.zeros((n, 2), dtype=np.int64)
    cost[0, 0] = 0.0 + lat_cpu[0]
    cost[0, 1] = 0.0 + lat_gpu[0]
    for i in range(1, n):
        for d in range(2):
            lat = lat_cpu[i] if d == 0 else lat_gpu[i]
            stay = cost[i - 1, d] + lat
            move = ((cost[i - 1, 1 - d] + xfer[i]) + switch) + lat
            if move < stay:
                cost[i, d] = move
                back[i, d] = 1 - d
            else:
                cost[i, d] = stay
                back[i, d] = d
    assign = np.zeros(n, dtype=np.int64)
    d = 0 if cost[n - 1, 0] <= cost[n - 1, 1] else 1
    best = cost[n - 1, d]
    for i in range(n - 1, -1, -1):
        assign[i] = d
        d = back[i, d]
    return best, assign


def _dp_chain_np(lat_cpu, lat_gpu, xfer, switch):
    n = lat_cpu.shape[0]
    lat = np.stack([lat_cpu, lat_gpu], axis=1)
    cost = np.empty((n, 2))
    back = np.zeros((n, 2), dtype=np.int64)
    cost[0] = 0.0 + lat[0]
    for i in range(1, n):
        stay = cost[i - 1] + lat[i]
        move = ((cost[i - 1, ::-1] + xfer[i]) + switch) + lat[i]
        take = move < stay
        cost[i] = np.where(take, move, stay)
        back[i] = np.where(take, [1, 0], [0, 1])
    assign = np.zeros(n, dtype=np.int64)
    d = 0 if cost[-1, 0] <= cost[-1, 1] else 1
    best = cost[-1, d]
    for i in range(n - 1, -1, -1):
        assign[i] = d
        d = back[i, d]
    return best, assign


@njit
def _enum_min_nb(lat_cpu, lat_gpu, xfer, switch):
    n = lat_cpu.shape[0]
    best = np.inf
    best_mask = 0
    for mask in range(1 << n):
        t = 0.0
        prev = 0
        for i in range(n):
            d = (mask >> i) & 1
            if i > 0 and d != prev:
                t = t + xfer[i]
                t = t + switch
            if d == 0:
                t = t + lat_cpu[i]
            else:
                t = t + lat_gpu[i]
            prev = d
        if t < best:
            best = t
            best_mask = mask
    return best, best_mask


def _enum_min_np(lat_cpu, lat_gpu, xfer, switch):
    n = lat_cpu.shape[0]
    masks = np.arange(1 << n, dtype=np.int64)
    assign = (masks[:, None] >> np.arange(n)) & 1
    costs = _plan_costs_np(lat_cpu, lat_gpu, xfer, switch, assign)
    k = int(np.argmin(costs))
    return float(costs[k]), k


def _as_chain(lat_cpu, lat_gpu, xfer):
    lat_cpu = np.ascontiguousarray(lat_cpu, dtype=np.float64)
    lat_gpu = np.ascontiguousarray(lat_gpu, dtype=np.float64)
    xfer = np.ascontiguousarray(xfer, dtype=np.float64)
    if not (lat_cpu.shape == lat_gpu.shape == xfer.shape) or lat_cpu.ndim != 1:
        raise ValueError(f"chain arrays disagree: {lat_cpu.shape}, {lat_gpu.shape}, {xfer.shape}")
    if lat_cpu.size == 0:
        raise ValueError("empty chain")
    return lat_cpu, lat_gpu, xfer


def plan_costs(lat_cpu, lat_gpu, xfer, switch, assign):
    """Total chain latency for each row of ``assign`` (shape m x n, 0/1)."""
    lat_cpu, lat_gpu, xfer = _as_chain(lat_cpu, lat_gpu, xfer)
    assign = np.ascontiguousarray(np.atleast_2d(assign), dtype=np.int64)
    if assign.shape[1] != lat_cpu.size:
        raise ValueError(f"assignment width {assign.shape[1]} != chain length {lat_cpu.size}")
    fn = _plan_costs_nb if USE_NUMBA else _plan_costs_np
    return fn(lat_cpu, lat_gpu, xfer, float(switch), assign)


def dp_chain(lat_cpu, lat_gpu, xfer, switch):
    """Optimal two-device assignment of a chain. Returns (latency, assignment)."""
    lat_cpu, lat_gpu, xfer = _as_chain(lat_cpu, lat_gpu, xfer)
    fn = _dp_chain_nb if USE_NUMBA else _dp_chain_np
    best, assign = fn(lat_cpu, lat_gpu, xfer, float(switch))
    return float(best), np.asarray(assign, dtype=np.int64)


def enumerate_min(lat_cpu, lat_gpu, xfer, switch):
    """Brute force over all 2**n assignments. Returns (latency, assignment)."""
    lat_cpu, lat_gpu, xfer = _as_chain(lat_cpu, lat_gpu, xfer)
    n = lat_cpu.size
    if n > MAX_ENUM_OPS:
        raise ValueError(f"refusing to enumerate 2**{n} assignments")
    fn = _enum_min_nb if USE_NUMBA else _enum_min_np
    best, mask = fn(lat_cpu, lat_gpu, xfer, float(switch))
    assign = (int(mask) >> np.arange(n)) & 1
    return float(best), assign.astype(np.int64)
