#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Run after building the extension:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from cadseq import kernels
from cadseq.kernels import fallback


def timeit(fn, *args, reps=5):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_scan(rng):
    B, T, E, N = 8, 256, 256, 16
    x = rng.standard_normal((B, T, E)).astype(np.float32)
    dt = rng.uniform(0.001, 0.1, (B, T, E)).astype(np.float32)
    a = -rng.uniform(0.5, 4.0, (E, N)).astype(np.float32)
    bs = rng.standard_normal((B, T, N)).astype(np.float32)
    c = rng.standard_normal((B, T, N)).astype(np.float32)
    rows = []
    for name, impl in (("compiled", kernels), ("fallback", fallback)):
        if name == "compiled" and kernels.BACKEND != "compiled":
            continue
        fwd = timeit(impl.sel_scan_fwd, x, dt, a, bs, c)
        y, h = impl.sel_scan_fwd(x, dt, a, bs, c)
        dy = np.ones_like(y)
        bwd = timeit(impl.sel_scan_bwd, dy, h, x, dt, a, bs, c)
        rows.append((f"sel_scan {B}x{T}x{E}x{N} [{name}]", fwd, bwd))
    return rows


def bench_chamfer(rng):
    a = rng.standard_normal((2000, 3))
    b = rng.standard_normal((2000, 3))
    rows = []
    for name, impl in (("compiled", kernels), ("fallback", fallback)):
        if name == "compiled" and kernels.BACKEND != "compiled":
            continue
        t = timeit(lambda: (impl.nn_sqdist(a, b), impl.nn_sqdist(b, a)))
        rows.append((f"chamfer nn 2000x2000 [{name}]", t, None))
    return rows


def bench_pip(rng):
    P = 200_000
    px = rng.uniform(-1, 1, P)
    py = rng.uniform(-1, 1, P)
    ang = np.linspace(0, 2 * np.pi, 65)
    vx = 0.5 + 0.4 * np.cos(ang)
    vy = 0.5 + 0.4 * np.sin(ang)
    starts = np.array([0, 65], dtype=np.int64)
    rows = []
    for name, impl in (("compiled", kernels), ("fallback", fallback)):
        if name == "compiled" and kernels.BACKEND != "compiled":
            continue
        t = timeit(impl.points_in_loops, px, py, vx, vy, starts)
        rows.append((f"point-in-loops 200k x 64-gon [{name}]", t, None))
    return rows


def main():
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<44} {'fwd (s)':>10} {'bwd (s)':>10}")
    for bench in (bench_scan, bench_chamfer, bench_pip):
        for name, fwd, bwd in bench(rng):
            bwd_s = f"{bwd:10.4f}" if bwd is not None else " " * 10
            print(f"{name:<44} {fwd:10.4f} {bwd_s}")


if __name__ == "__main__":
    main()
