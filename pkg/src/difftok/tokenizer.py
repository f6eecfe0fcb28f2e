"""Differentiable k-means tokenization.

Numpy-level semantics live here: codebook initialization (k-means++ seeding
plus Lloyd refinement), soft assignment, Gumbel-Softmax relaxation, hardening
and the quantization loss. The trainable graph composes the matching autodiff
primitives; both paths share the same distance kernels so the inference
tokenizer and the soft assignment agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core_math import SeededRng, gumbel_from_uniform, pairwise_sq_dists, softmax_t

LLOYD_TOL = 1e-6
LLOYD_MAX_ITER = 300


@dataclass
class Codebook:
    """k centroids of dimension D plus the assignment precision sigma^2."""

    centroids: np.ndarray
    sigma_sq: float = 1.0

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=float)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 2:
            raise ValueError("codebook needs a (k>=2, D) centroid matrix")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("codebook centroids must be finite")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "dim": self.dim,
            "sigma_sq": self.sigma_sq,
            "centroids": self.centroids.reshape(-1).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Codebook":
        c = np.asarray(d["centroids"], dtype=float).reshape(d["k"], d["dim"])
        return cls(centroids=c, sigma_sq=float(d["sigma_sq"]))


@dataclass
class AssignmentMatrix:
    probs: np.ndarray       # (T, k) soft assignment
    relaxed: np.ndarray     # (T, k) Gumbel-Softmax sample
    hard_ids: np.ndarray    # (T,) argmax token ids
    hard_onehot: np.ndarray # (T, k)


@dataclass
class TokenSequence:
    ids: np.ndarray
    utt_id: str = ""

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class KMeansFit:
    codebook: Codebook
    inertia_history: list[float] = field(default_factory=list)
    labels: np.ndarray | None = None

    @property
    def final_inertia(self) -> float:
        return self.inertia_history[-1]


def _kmeans_pp_seeds(x: np.ndarray, k: int, rng: SeededRng) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = int(rng.integers(0, n))
    centers[0] = x[first]
    d2 = kernels.pairwise_sq_dists(x, centers[:1])[:, 0]
    for j in range(1, k):
        idx = rng.choice_weighted(d2)
        centers[j] = x[idx]
        d2 = np.minimum(d2, kernels.pairwise_sq_dists(x, centers[j:j + 1])[:, 0])
    return centers


def fit_kmeans(features: np.ndarray, k: int, seed: int, sigma_sq: float = 1.0) -> KMeansFit:
    """k-means++ seeding followed by Lloyd iterations.

    Stops when the max centroid shift drops below LLOYD_TOL or after
    LLOYD_MAX_ITER rounds. Empty clusters are re-seeded at the point
    currently farthest from its assigned centroid (deterministic fix).
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2:
        raise ValueError("features must be a (N, D) matrix")
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    distinct = np.unique(x, axis=0).shape[0]
    if distinct < k:
        raise ValueError(f"only {distinct} distinct points for k={k} clusters")

    rng = SeededRng(seed)
    centers = _kmeans_pp_seeds(x, k, rng)
    inertia_history: list[float] = []
    labels = None
    for _ in range(LLOYD_MAX_ITER):
        labels, d2 = kernels.nearest_assign(x, centers)
        inertia_history.append(float(d2.sum()))
        new_centers = centers.copy()
        for j in range(k):
            mask = labels == j
            if mask.any():
                new_centers[j] = x[mask].mean(axis=0)
            else:
                new_centers[j] = x[int(np.argmax(d2))]
        shift = float(np.max(np.abs(new_centers - centers)))
        centers = new_centers
        if shift < LLOYD_TOL:
            break
    labels, d2 = kernels.nearest_assign(x, centers)
    inertia_history.append(float(d2.sum()))
    return KMeansFit(
        codebook=Codebook(centroids=centers, sigma_sq=sigma_sq),
        inertia_history=inertia_history,
        labels=labels,
    )


def init_codebook(features: np.ndarray, k: int, seed: int, sigma_sq: float = 1.0) -> Codebook:
    return fit_kmeans(features, k, seed, sigma_sq).codebook


def assign_soft(features: np.ndarray, codebook: Codebook) -> np.ndarray:
    """p(j|s_i) proportional to exp(-sigma^2 ||s_i - mu_j||^2), row-normalized."""
    d = pairwise_sq_dists(features, codebook.centroids)
    return softmax_t(-codebook.sigma_sq * d, 1.0)


def gumbel_sample(probs: np.ndarray, tau: float, rng: SeededRng | None,
                  noise: np.ndarray | None = None) -> np.ndarray:
    """Relaxed samples h = softmax((log p + G) / tau), fresh noise per row.

    Pass noise explicitly (e.g. zeros) to pin the draw; otherwise it is
    sampled from rng.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    probs = np.asarray(probs, dtype=float)
    if noise is None:
        if rng is None:
            raise ValueError("either rng or explicit noise is required")
        noise = gumbel_from_uniform(rng.uniform(size=probs.shape))
    logp = np.log(np.maximum(probs, 1e-30))
    return softmax_t(logp + noise, tau)


def harden(relaxed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row argmax with smallest-index tie-break; returns (ids, onehot)."""
    relaxed = np.asarray(relaxed, dtype=float)
    if not np.all(np.isfinite(relaxed)):
        raise ValueError("relaxed rows must be finite")
    ids = np.argmax(relaxed, axis=1).astype(np.int64)
    onehot = np.zeros_like(relaxed)
    onehot[np.arange(relaxed.shape[0]), ids] = 1.0
    return ids, onehot


def kmeans_loss(features: np.ndarray, hard_onehot: np.ndarray, codebook: Codebook) -> float:
    """Sum over frames of ||s_i - h~_i M||^2 (raw sum, matching the k-means
    objective; the joint loss divides by frame count separately)."""
    features = np.asarray(features, dtype=float)
    hard_onehot = np.asarray(hard_onehot, dtype=float)
    if features.shape[0] != hard_onehot.shape[0]:
        raise ValueError("frame count mismatch")
    if hard_onehot.shape[1] != codebook.k:
        raise ValueError("cluster count mismatch")
    diff = features - hard_onehot @ codebook.centroids
    return float(np.sum(diff * diff))


def assignment_forward(features: np.ndarray, codebook: Codebook, tau: float,
                       rng: SeededRng | None = None,
                       noise: np.ndarray | None = None) -> AssignmentMatrix:
    """Full training-path assignment: soft probs, relaxed sample, hard ids."""
    probs = assign_soft(features, codebook)
    relaxed = gumbel_sample(probs, tau, rng, noise)
    ids, onehot = harden(relaxed)
    return AssignmentMatrix(probs=probs, relaxed=relaxed, hard_ids=ids, hard_onehot=onehot)


def tokenize_inference(features: np.ndarray, codebook: Codebook, utt_id: str = "") -> TokenSequence:
    """Deterministic evaluation-time path: nearest centroid, no noise."""
    features = np.asarray(features, dtype=float)
    if features.shape[1] != codebook.dim:
        raise ValueError(f"feature dim {features.shape[1]} vs codebook dim {codebook.dim}")
    ids, _ = kernels.nearest_assign(features, codebook.centroids)
    return TokenSequence(ids=ids, utt_id=utt_id)
