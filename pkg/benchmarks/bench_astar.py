"""Compare the compiled and pure-Python A* kernels on random grids.

    python3 benchmarks/bench_astar.py [--sizes 16 32 64] [--queries 50] [--seed 0]

Both kernels answer the same queries; results are checked to be identical
before timings are reported.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from wwrouter import kernels


def make_queries(rng, L, R, C, n, density):
    blocked = (rng.random(L * R * C) < density).astype(np.uint8)
    entry = rng.integers(0, 4, L * R * C).astype(np.float64)
    free = np.flatnonzero(blocked == 0)
    pairs = [tuple(int(x) for x in rng.choice(free, 2, replace=False)) for _ in range(n)]
    return entry, blocked, pairs


def run(kernel, L, R, C, entry, blocked, pairs):
    t0 = time.perf_counter()
    out = [kernel([s], t, entry, blocked, L, R, C, 1.0, 4.0, 2.0) for s, t in pairs]
    return time.perf_counter() - t0, out


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64])
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--queries", type=int, default=50)
    p.add_argument("--density", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    if kernels.astar_ext is None:
        print("compiled kernel not built; only the Python kernel is available")
    print(f"{'grid':>12} {'python_s':>10} {'cython_s':>10} {'speedup':>8}")
    rng = np.random.default_rng(args.seed)
    for size in args.sizes:
        L, R, C = args.layers, size, size
        entry, blocked, pairs = make_queries(rng, L, R, C, args.queries, args.density)
        t_py, res_py = run(kernels.astar_py, L, R, C, entry, blocked, pairs)
        if kernels.astar_ext is None:
            print(f"{L}x{R}x{C:<6} {t_py:10.4f} {'-':>10} {'-':>8}")
            continue
        t_ext, res_ext = run(kernels.astar_ext, L, R, C, entry, blocked, pairs)
        if res_py != res_ext:
            raise SystemExit(f"kernels disagree on {L}x{R}x{C}")
        print(f"{L}x{R}x{C:<6} {t_py:10.4f} {t_ext:10.4f} {t_py / t_ext:8.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
