"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Shapes follow the full protocol: 1600 pool rows of 512*2*2 features
against 10 centroids, and 512x16x16 bottleneck maps pooled to 2x2.
"""
import argparse
import time

import numpy as np

from ssal import _kernels_py
from ssal import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n", type=int, default=1600)
    ap.add_argument("--d", type=int, default=2048)
    ap.add_argument("--k", type=int, default=10)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.n, args.d))
    c = rng.standard_normal((args.k, args.d))
    labels = rng.integers(0, args.k, args.n)
    fmaps = rng.standard_normal((64, 512, 16, 16))

    try:
        from ssal import _kernels as compiled
    except ImportError:
        compiled = None
        print("compiled extension not built; only the numpy fallback is timed")

    cases = {
        f"assign_sq {args.n}x{args.d}, k={args.k}": lambda m: m.assign_sq(x, c),
        f"centroid_sums {args.n}x{args.d}": lambda m: m.centroid_sums(x, labels, args.k),
        "adaptive_avg_pool 64 x 512x16x16 -> 2x2": lambda m: [m.adaptive_avg_pool(f, 2) for f in fmaps],
    }
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<42}{'numpy (ms)':>12}{'compiled (ms)':>15}{'speedup':>9}")
    for name, fn in cases.items():
        py = best_of(lambda: fn(_kernels_py), args.repeat) * 1e3
        if compiled is None:
            print(f"{name:<42}{py:>12.2f}{'-':>15}{'-':>9}")
            continue
        cy = best_of(lambda: fn(compiled), args.repeat) * 1e3
        print(f"{name:<42}{py:>12.2f}{cy:>15.2f}{py / cy:>8.1f}x")


if __name__ == "__main__":
    main()
