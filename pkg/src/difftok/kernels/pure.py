"""Pure-numpy fallback implementations of the hot kernels.

Semantically equivalent to the compiled `_speedups` extension; floating-point
results may differ by a few ulps because numpy's reductions use pairwise
summation while the C loops are sequential.
"""

from __future__ import annotations

import numpy as np


def pairwise_sq_dists(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance between every row of x (T,D) and m (k,D)."""
    diff = x[:, None, :] - m[None, :, :]
    return np.einsum("tkd,tkd->tk", diff, diff)


def nearest_assign(x: np.ndarray, m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest row of m for each row of x, plus that distance."""
    d = pairwise_sq_dists(x, m)
    labels = np.argmin(d, axis=1)
    return labels.astype(np.int64), d[np.arange(len(x)), labels]


def levenshtein(a: np.ndarray, b: np.ndarray) -> int:
    """Unit-cost edit distance between two integer sequences."""
    n, m = len(a), len(b)
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.arange(m + 1, dtype=np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ai == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev, cur = cur, prev
    return int(prev[m])
