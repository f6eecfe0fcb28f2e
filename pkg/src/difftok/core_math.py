"""Seeded randomness and elementary numerical primitives.

Everything here is double precision. The RNG is a thin wrapper around
numpy's PCG64, which numpy guarantees to be stream-stable across platforms;
one seed therefore pins every downstream artifact bit-exactly.
"""

from __future__ import annotations

import numpy as np

from . import kernels

# Uniform draws are kept this far away from {0, 1} before the Gumbel
# transform so -log(-log(u)) stays finite.
UNIFORM_CLAMP = 1e-12

EULER_MASCHERONI = 0.5772156649015329


class SeededRng:
    """Deterministic random stream. Single-owner: fork per worker, never share."""

    def __init__(self, seed: int):
        if not (0 <= int(seed) < 2**64):
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_weighted(self, weights: np.ndarray) -> int:
        """Sample an index proportionally to non-negative weights."""
        total = float(np.sum(weights))
        if not (total > 0):
            raise ValueError("weights must have positive sum")
        u = float(self._gen.random()) * total
        return int(np.searchsorted(np.cumsum(weights), u, side="right").clip(0, len(weights) - 1))

    def fork(self, stream: int) -> "SeededRng":
        """Derive an independent child stream; deterministic in (seed, stream)."""
        child = SeededRng.__new__(SeededRng)
        child.seed = self.seed
        child._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=(stream,)))
        )
        return child


def sq_euclidean(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance between two equal-length vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(d @ d)


def softmax_t(logits: np.ndarray, tau: float) -> np.ndarray:
    """Temperature softmax along the last axis, max-subtracted for stability."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    z = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax_t requires finite logits")
    z = z / tau
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def gumbel_from_uniform(u: np.ndarray) -> np.ndarray:
    """G = -ln(-ln u) with u clamped into the open unit interval."""
    u = np.clip(np.asarray(u, dtype=float), UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    return -np.log(-np.log(u))


def sample_gumbel(rng: SeededRng, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return gumbel_from_uniform(rng.uniform(size=n))


def pairwise_sq_dists(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Row-vs-row squared distances, dispatched to the active kernel backend."""
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    if x.ndim != 2 or m.ndim != 2 or x.shape[1] != m.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape} vs {m.shape}")
    return kernels.pairwise_sq_dists(x, m)


def log_sum_exp(z: np.ndarray) -> np.ndarray:
    zmax = np.max(z, axis=-1, keepdims=True)
    return (zmax + np.log(np.sum(np.exp(z - zmax), axis=-1, keepdims=True)))[..., 0]


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")


def geometric_interp(start: float, end: float, frac: float) -> float:
    return float(start * (end / start) ** frac)


def assert_shape(name: str, arr: np.ndarray, shape: tuple) -> None:
    if arr.shape != shape:
        raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")


def entropy_nats(p: np.ndarray) -> float:
    """Shannon entropy in nats with the 0*log0 = 0 convention."""
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))
