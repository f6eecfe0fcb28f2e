"""Benchmark the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from difftok.kernels import pure

try:
    from difftok.kernels import _speedups as compiled
except ImportError:
    compiled = None


def timeit(fn, args, repeats):
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = [
        ("pairwise_sq_dists",
         [((n, d), (k, d)) for n, k, d in [(60, 16, 16), (600, 32, 16),
                                           (6000, 64, 32)]]),
        ("nearest_assign",
         [((n, d), (k, d)) for n, k, d in [(60, 16, 16), (600, 32, 16),
                                           (6000, 64, 32)]]),
    ]

    print(f"{'kernel':<20} {'shape':<24} {'pure (ms)':>10} "
          f"{'compiled (ms)':>14} {'speedup':>8}")
    for name, shapes in cases:
        for xs, ms in shapes:
            x = np.ascontiguousarray(rng.normal(size=xs))
            m = np.ascontiguousarray(rng.normal(size=ms))
            tp = timeit(getattr(pure, name), (x, m), args.repeats)
            row = f"{name:<20} {f'{xs}x{ms}':<24} {tp * 1e3:>10.3f}"
            if compiled is not None:
                tc = timeit(getattr(compiled, name), (x, m), args.repeats)
                row += f" {tc * 1e3:>14.3f} {tp / tc:>7.1f}x"
            else:
                row += f" {'n/a':>14} {'n/a':>8}"
            print(row)

    for la, lb in [(60, 60), (500, 500), (2000, 2000)]:
        a = np.ascontiguousarray(rng.integers(0, 16, size=la), dtype=np.int64)
        b = np.ascontiguousarray(rng.integers(0, 16, size=lb), dtype=np.int64)
        tp = timeit(pure.levenshtein, (a, b), args.repeats)
        row = f"{'levenshtein':<20} {f'{la}x{lb}':<24} {tp * 1e3:>10.3f}"
        if compiled is not None:
            tc = timeit(compiled.levenshtein, (a, b), args.repeats)
            row += f" {tc * 1e3:>14.3f} {tp / tc:>7.1f}x"
        else:
            row += f" {'n/a':>14} {'n/a':>8}"
        print(row)


if __name__ == "__main__":
    main()
