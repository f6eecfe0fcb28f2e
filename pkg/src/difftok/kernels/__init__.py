"""Kernel dispatch: compiled Cython extension when available, numpy fallback
otherwise. Set DIFFTOK_PURE=1 to force the fallback."""

from __future__ import annotations

import os

import numpy as np

from . import pure

if os.environ.get("DIFFTOK_PURE"):
    _impl = pure
    BACKEND = "pure"
else:
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = pure
        BACKEND = "pure"


def _c2d(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def pairwise_sq_dists(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    return _impl.pairwise_sq_dists(_c2d(x), _c2d(m))


def nearest_assign(x: np.ndarray, m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _impl.nearest_assign(_c2d(x), _c2d(m))


def levenshtein(a, b) -> int:
    a = np.ascontiguousarray(a, dtype=np.int64)
    b = np.ascontiguousarray(b, dtype=np.int64)
    return _impl.levenshtein(a, b)
