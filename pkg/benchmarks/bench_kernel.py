"""Compare the compiled and pure-Python station kernels.

    python benchmarks/bench_kernel.py --requests 200000 --repeat 3

Both kernels receive identical inputs; the script checks that their outputs
agree bit for bit and prints the best-of-N wall time of each.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from perfbridge.qpn import kernel


def tandem_inputs(n: int, stations: int, rho: float, ps: bool, seed: int):
    rng = np.random.default_rng(seed)
    arrival = np.cumsum(rng.exponential(1.0, n))
    ptr = np.arange(0, stations * (n + 1), stations, dtype=np.int64)
    station = np.tile(np.arange(stations, dtype=np.int32), n)
    work = rng.exponential(rho, n * stations)
    servers = np.ones(stations, dtype=np.int32)
    is_ps = np.full(stations, 1 if ps else 0, dtype=np.int8)
    horizon = float(arrival[-1])
    return arrival, ptr, station, work, servers, is_ps, 0.05 * horizon, horizon


def best_of(fn, args, repeat: int) -> tuple[float, tuple]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def same(a: tuple, b: tuple) -> bool:
    return (
        np.array_equal(a[0], b[0], equal_nan=True)
        and np.array_equal(a[1], b[1])
        and a[2] == b[2]
        and a[3] == b[3]
    )


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--requests", type=int, default=100_000)
    ap.add_argument("--stations", type=int, default=3)
    ap.add_argument("--rho", type=float, default=0.7, help="per-station utilization")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if kernel.run_stations_compiled is None:
        print("compiled kernel not built; only the Python kernel is available", file=sys.stderr)
        return 1

    print(f"{'case':<10}{'requests':>10}{'python s':>12}{'cython s':>12}{'speedup':>10}  identical")
    for label, ps in (("FCFS", False), ("PS", True)):
        n = args.requests if not ps else max(1, args.requests // 4)
        inputs = tandem_inputs(n, args.stations, args.rho, ps, args.seed)
        t_py, out_py = best_of(kernel.run_stations_py, inputs, args.repeat)
        t_c, out_c = best_of(kernel.run_stations_compiled, inputs, args.repeat)
        print(f"{label:<10}{n:>10}{t_py:>12.3f}{t_c:>12.3f}{t_py / t_c:>9.1f}x  {same(out_py, out_c)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
