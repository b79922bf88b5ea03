"""Compare the numba and numpy versions of the chain kernels.

    python3 benchmarks/bench_kernels.py [--sizes 8 12 16 20] [--repeat 5]

With numba installed the ``_nb`` twins are compiled; the first call (compilation or
cache load) is excluded from the timings. Both versions must agree exactly.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from opsched import kernels as K


def _time(fn, args, repeat):
    fn(*args)   # warm-up / compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[8, 12, 16, 20])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"numba available: {K.NUMBA_AVAILABLE}")
    print(f"{'kernel':<12}{'n':>4}{'numba (s)':>14}{'numpy (s)':>14}{'speedup':>10}")
    for n in args.sizes:
        lc, lg, xf = rng.uniform(1e-6, 1e-3, size=(3, n))
        sw = 2e-5
        chain = (lc, lg, xf, sw)
        masks = np.arange(1 << n, dtype=np.int64)
        assign = np.ascontiguousarray((masks[:, None] >> np.arange(n)) & 1)
        cases = [("enumerate", K._enum_min_nb, K._enum_min_np, chain),
                 ("dp", K._dp_chain_nb, K._dp_chain_np, chain),
                 ("plan_costs", K._plan_costs_nb, K._plan_costs_np, chain + (assign,))]
        for name, nb, npf, a in cases:
            t_nb, r_nb = _time(nb, a, args.repeat)
            t_np, r_np = _time(npf, a, args.repeat)
            same = np.array_equal(np.asarray(r_nb[0] if isinstance(r_nb, tuple) else r_nb),
                                  np.asarray(r_np[0] if isinstance(r_np, tuple) else r_np))
            flag = "" if same else "  MISMATCH"
            print(f"{name:<12}{n:>4}{t_nb:>14.3e}{t_np:>14.3e}{t_np / t_nb:>9.1f}x{flag}")


if __name__ == "__main__":
    main()
