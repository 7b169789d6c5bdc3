"""Compiled kernels vs the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints median wall time per call for each kernel and backend and the speedup.
"""

import argparse
import timeit

import numpy as np

from phytac import _pykernels, kernels


def cases():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-10, 10, 5000), rng.uniform(-10, 10, 5000), rng.uniform(-2, 0, 5000)])
    sparse = np.column_stack([rng.uniform(-10, 10, 300), rng.uniform(-10, 10, 300), rng.uniform(-2, 0, 300)])
    depth, filled = _pykernels.rasterize_nearest(sparse, 32, 32, 20.0, 20.0)
    x = rng.uniform(size=(32, 32))
    y = np.clip(x + rng.normal(scale=0.1, size=(32, 32)), 0, 1)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    return {
        "splitmix64_block(1e5)": lambda k: k.splitmix64_block(42, 0, 100_000),
        "rasterize_nearest(5000 pts)": lambda k: k.rasterize_nearest(pts, 32, 32, 20.0, 20.0),
        "fill_holes(32x32, 300 pts)": lambda k: k.fill_holes(depth, filled),
        "ssim_mean(32x32)": lambda k: k.ssim_mean(x, y, 8, 4, c1, c2),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.compiled_available():
        print("compiled extension not built; only the numpy fallback is available")
        return
    from phytac import _ckernels

    print(f"{'kernel':<30} {'cython (us)':>12} {'python (us)':>12} {'speedup':>8}")
    for name, fn in cases().items():
        row = []
        for impl in (_ckernels, _pykernels):
            t = timeit.Timer(lambda: fn(impl))
            n, _ = t.autorange()
            row.append(np.median(t.repeat(args.repeat, n)) / n * 1e6)
        print(f"{name:<30} {row[0]:>12.1f} {row[1]:>12.1f} {row[1] / row[0]:>7.1f}x")


if __name__ == "__main__":
    main()
