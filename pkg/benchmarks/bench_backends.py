#!/usr/bin/env python3
"""Times the numba kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_backends.py [--size N] [--repeats R]
"""

import argparse
import time

import numpy as np

from segsynth.backend import numba_impl, numpy_impl


def _bench(fn, *args, repeats=3):
    fn(*args)  # warm-up (JIT compile on the numba side)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=128, help="cube edge length")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    n = args.size
    rng = np.random.default_rng(0)
    volume = rng.random((n, n, n)).astype(np.float32)
    labels = rng.integers(0, 8, (n, n, n)).astype(np.int32)
    mask = rng.random((n, n, n)) < 0.15
    mat = np.eye(3) * 0.97
    off = np.array([0.3, -0.2, 0.5])
    disp = rng.normal(0, 2.0, (3, n, n, n)).astype(np.float32)
    spacing = (1.0, 1.2, 2.5)
    kernel = np.exp(-np.linspace(-3, 3, 13) ** 2 / 2.0)
    kernel /= kernel.sum()
    rows = volume.reshape(-1, n)

    cases = [
        ("pull_affine_linear", lambda impl: impl.pull_affine_linear(volume, mat, off, (n, n, n))),
        ("pull_affine_nearest", lambda impl: impl.pull_affine_nearest(labels, mat, off, (n, n, n))),
        ("pull_field_linear", lambda impl: impl.pull_field_linear(volume, disp[0], disp[1], disp[2])),
        ("pull_field_nearest", lambda impl: impl.pull_field_nearest(labels, disp[0], disp[1], disp[2])),
        ("edt_squared", lambda impl: impl.edt_squared(mask, spacing)),
        ("blur_rows_replicate", lambda impl: impl.blur_rows_replicate(rows, kernel)),
    ]

    print(f"volume {n}^3, best of {args.repeats}")
    print(f"{'kernel':<22}{'numba (s)':>12}{'numpy (s)':>12}{'speedup':>10}")
    for name, runner in cases:
        t_nb = _bench(lambda: runner(numba_impl), repeats=args.repeats)
        t_np = _bench(lambda: runner(numpy_impl), repeats=args.repeats)
        print(f"{name:<22}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>10.1f}x")


if __name__ == "__main__":
    main()
