"""Exact ground truth and per-query kNN distribution statistics.

Count distributions are plain length-B int64 arrays; probing labels are
length-B uint8 masks. Both are always computed against a hard layout,
before any redundancy is applied.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codecs import read_vectors, write_vectors
from .core import check_dataset, check_vector, pairwise_l2_sq, smallest_k

_CHUNK_BUDGET_BYTES = 512 * 1024 * 1024


@dataclass
class KnnResult:
    """Distance-sorted exact or approximate neighbors of one query."""

    ids: np.ndarray    # int32, distinct
    dists: np.ndarray  # float64 squared L2, non-decreasing


def _query_chunk_rows(n_points: int) -> int:
    rows = _CHUNK_BUDGET_BYTES // max(1, n_points * 8)
    return int(min(2048, max(8, rows)))


def brute_force_knn(dataset, query, k: int) -> KnnResult:
    """Exact k nearest neighbors; ties at equal distance go to the smaller id."""
    data = check_dataset(dataset)
    q = check_vector(query, data.shape[1])
    if not 1 <= k <= data.shape[0]:
        raise ValueError(f"k must be in [1, {data.shape[0]}], got {k}")
    dists = pairwise_l2_sq(q[None, :], data)[0]
    sel = smallest_k(dists, k)
    return KnnResult(ids=sel.astype(np.int32), dists=dists[sel])


def brute_force_knn_batch(
    dataset,
    queries,
    k: int,
    exclude: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact kNN for a batch of queries with bounded memory.

    Queries are processed in row chunks so the full (nq, n) distance
    matrix is never materialized. `exclude` optionally gives one dataset
    id per query to skip (used to drop self-matches when the queries are
    dataset rows). Returns (ids, dists) of shapes (nq, k) / (nq, k).
    """
    data = check_dataset(dataset)
    q = np.asarray(queries, dtype=np.float32)
    if q.ndim != 2 or q.shape[1] != data.shape[1]:
        raise ValueError(f"queries must be (nq, {data.shape[1]}), got {q.shape}")
    n = data.shape[0]
    limit = n - (0 if exclude is None else 1)
    if not 1 <= k <= limit:
        raise ValueError(f"k must be in [1, {limit}], got {k}")
    if exclude is not None:
        exclude = np.asarray(exclude, dtype=np.int64)
        if exclude.shape != (q.shape[0],):
            raise ValueError("exclude must hold one dataset id per query")

    ids = np.empty((q.shape[0], k), dtype=np.int32)
    dists = np.empty((q.shape[0], k), dtype=np.float64)
    chunk = _query_chunk_rows(n)
    x64 = data.astype(np.float64)
    x_norms = (x64 * x64).sum(axis=1)
    for start in range(0, q.shape[0], chunk):
        stop = min(start + chunk, q.shape[0])
        q64 = q[start:stop].astype(np.float64)
        d = q64 @ (-2.0 * x64.T)
        d += x_norms[None, :]
        d += (q64 * q64).sum(axis=1)[:, None]
        np.maximum(d, 0.0, out=d)
        if exclude is not None:
            d[np.arange(stop - start), exclude[start:stop]] = np.inf
        for i in range(stop - start):
            sel = smallest_k(d[i], k)
            ids[start + i] = sel
            dists[start + i] = d[i, sel]
    return ids, dists


def knn_count_distribution(layout, knn_ids) -> np.ndarray:
    """Per-partition counts of the given neighbor ids over a hard layout."""
    if layout.kind != "hard":
        raise ValueError(f"count distributions need a hard layout, got {layout.kind!r}")
    knn_ids = np.asarray(knn_ids, dtype=np.int64).ravel()
    if knn_ids.size and (knn_ids.min() < 0 or knn_ids.max() >= layout.home.shape[0]):
        raise ValueError("neighbor id outside the layout's id range")
    return np.bincount(layout.home[knn_ids], minlength=layout.n_partitions).astype(np.int64)


def probing_label(counts) -> np.ndarray:
    """Binary mask marking the partitions that hold at least one neighbor."""
    counts = np.asarray(counts)
    return (counts > 0).astype(np.uint8)


def optimal_nprobe(mask) -> int:
    """Number of marked partitions, the minimum probe count covering all kNN."""
    return int(np.asarray(mask).astype(bool).sum())


def distance_rank_nprobe(counts, centroid_order) -> int:
    """1-based rank of the worst-ranked kNN partition under distance ordering.

    Probing the `centroid_order`-nearest that many partitions covers every
    neighbor counted in `counts`.
    """
    counts = np.asarray(counts)
    order = np.asarray(centroid_order, dtype=np.int64)
    b = counts.shape[0]
    if order.shape != (b,) or not np.array_equal(np.sort(order), np.arange(b)):
        raise ValueError("centroid_order must be a permutation of 0..B-1")
    if not (counts > 0).any():
        raise ValueError("count distribution is all zero")
    ranks = np.empty(b, dtype=np.int64)
    ranks[order] = np.arange(1, b + 1)
    return int(ranks[counts > 0].max())


@dataclass
class LongTailStats:
    min_nonzero: int
    long_tail_partitions: np.ndarray  # partitions holding exactly one neighbor


def long_tail_stats(counts) -> LongTailStats:
    """Smallest nonzero partition count and the partitions at count one."""
    counts = np.asarray(counts)
    nonzero = counts[counts > 0]
    if nonzero.size == 0:
        raise ValueError("count distribution is all zero")
    return LongTailStats(
        min_nonzero=int(nonzero.min()),
        long_tail_partitions=np.flatnonzero(counts == 1).astype(np.int64),
    )


def ground_truth_cache_key(dataset, queries, k: int) -> str:
    """Content hash identifying a (dataset, queries, k) ground-truth run."""
    h = hashlib.blake2b(digest_size=8)
    for arr in (np.ascontiguousarray(dataset), np.ascontiguousarray(queries)):
        h.update(np.asarray(arr.shape, dtype=np.int64).tobytes())
        h.update(arr.tobytes())
    h.update(np.int64(k).tobytes())
    return h.hexdigest()


def compute_or_load_ground_truth(
    dataset, queries, k: int, cache_dir
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Brute-force ground truth with a content-addressed file cache.

    The ids go to an ivecs file and the distances to a sibling fvecs file
    under `cache_dir`. Returns (ids, dists, cache_hit).
    """
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = ground_truth_cache_key(dataset, queries, k)
    ids_path = cache_dir / f"gt-k{k}-{key}.ivecs"
    dists_path = cache_dir / f"gt-k{k}-{key}.fvecs"
    if ids_path.exists() and dists_path.exists():
        return read_vectors(ids_path, "ivecs"), read_vectors(dists_path, "fvecs"), True
    ids, dists = brute_force_knn_batch(dataset, queries, k)
    write_vectors(ids, ids_path, "ivecs")
    write_vectors(dists.astype(np.float32), dists_path, "fvecs")
    return ids, dists.astype(np.float32), False
