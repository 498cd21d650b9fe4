"""Vector storage helpers, squared-L2 distance kernels, and synthetic data.

Datasets are plain (n, d) float32 arrays with implicit row ids 0..n-1.
All distance arithmetic accumulates in float64; only storage is float32.
"""

from __future__ import annotations

import numpy as np


def check_dataset(data) -> np.ndarray:
    """Validate and return a dataset as a C-contiguous (n, d) float32 array."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"dataset must be 2-dimensional, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"dataset must have n >= 1 and d >= 1, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("dataset contains NaN or Inf values")
    return arr


def check_vector(v, d: int | None = None) -> np.ndarray:
    """Validate a single query vector, optionally against an expected dimension."""
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.size < 1:
        raise ValueError("vector must be non-empty")
    if d is not None and arr.size != d:
        raise ValueError(f"vector has dimension {arr.size}, expected {d}")
    if not np.isfinite(arr).all():
        raise ValueError("vector contains NaN or Inf values")
    return arr


def l2_sq(a, b) -> float:
    """Squared Euclidean distance between two equal-length vectors."""
    av = check_vector(a)
    bv = check_vector(b)
    if av.size != bv.size:
        raise ValueError(f"dimension mismatch: {av.size} vs {bv.size}")
    diff = av - bv
    return float(diff @ diff)


def pairwise_l2_sq(queries, points) -> np.ndarray:
    """Squared L2 distances between every query row and every point row.

    Returns an (nq, n) float64 matrix. Uses the expanded form
    ||q||^2 + ||x||^2 - 2 q.x in float64; tiny negative rounding residue
    is clamped to zero.
    """
    q = np.asarray(queries, dtype=np.float64)
    x = np.asarray(points, dtype=np.float64)
    if q.ndim != 2 or x.ndim != 2:
        raise ValueError("pairwise_l2_sq expects 2-dimensional inputs")
    if q.shape[1] != x.shape[1]:
        raise ValueError(f"dimension mismatch: {q.shape[1]} vs {x.shape[1]}")
    d = q @ (-2.0 * x.T)
    d += (q * q).sum(axis=1)[:, None]
    d += (x * x).sum(axis=1)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def smallest_k(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest values, ties broken by smaller index."""
    n = values.shape[0]
    if k >= n:
        return np.lexsort((np.arange(n), values))
    part = np.argpartition(values, k - 1)[:k]
    bound = values[part].max()
    # pull in every candidate at the boundary, then order deterministically
    cand = np.flatnonzero(values <= bound)
    order = np.lexsort((cand, values[cand]))
    return cand[order[:k]]


def gen_synthetic(n: int, d: int, clusters: int, spread: float, seed: int) -> np.ndarray:
    """Generate a seeded Gaussian-mixture dataset.

    Component means are drawn uniformly in [0, 1]^d; each component is
    isotropic with standard deviation `spread`. Reproducible bit-for-bit
    for a fixed (n, d, clusters, spread, seed).
    """
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if not 1 <= clusters <= n:
        raise ValueError(f"clusters must be in [1, n], got {clusters}")
    if spread < 0:
        raise ValueError(f"spread must be >= 0, got {spread}")
    rng = np.random.default_rng(seed)
    means = rng.uniform(0.0, 1.0, size=(clusters, d))
    labels = rng.integers(0, clusters, size=n)
    data = means[labels] + spread * rng.standard_normal((n, d))
    return data.astype(np.float32)


def gen_synthetic_queries(n: int, d: int, clusters: int, spread: float,
                          seed: int) -> np.ndarray:
    """Held-out queries from the same mixture `gen_synthetic(seed)` draws.

    Replays the component means of the dataset stream, then samples from
    an independent stream, so the dataset bytes never depend on how many
    queries are requested.
    """
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    if clusters < 1:
        raise ValueError(f"clusters must be >= 1, got {clusters}")
    if spread < 0:
        raise ValueError(f"spread must be >= 0, got {spread}")
    means = np.random.default_rng(seed).uniform(0.0, 1.0, size=(clusters, d))
    rng = np.random.default_rng((seed, 1))
    labels = rng.integers(0, clusters, size=n)
    data = means[labels] + spread * rng.standard_normal((n, d))
    return data.astype(np.float32)
