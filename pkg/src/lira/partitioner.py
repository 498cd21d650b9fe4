"""K-Means partitioning and the hard / fuzzy / redundant partition layouts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import check_dataset, check_vector, pairwise_l2_sq

_ASSIGN_CHUNK = 8192


@dataclass
class PartitionLayout:
    """B centroids plus per-partition member id lists.

    `home` always holds the nearest-centroid partition of every id, which
    for hard layouts coincides with the single member list holding it.
    Replica entries of redundant layouts never change `home`.
    """

    centroids: np.ndarray        # (B, d) float32
    members: list                # B int32 id arrays
    kind: str                    # "hard" | "fuzzy2" | "redundant"
    home: np.ndarray             # (n,) int32
    plan: "RedundancyPlan | None" = field(default=None)  # noqa: F821

    @property
    def n_partitions(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def n_points(self) -> int:
        return self.home.shape[0]

    @property
    def member_sizes(self) -> np.ndarray:
        return np.array([m.size for m in self.members], dtype=np.int64)

    @property
    def total_entries(self) -> int:
        return int(self.member_sizes.sum())


@dataclass
class KMeansResult:
    centroids: np.ndarray        # (B, d) float32
    inertia_history: list[float]
    n_iter: int
    converged: bool


def _assign_argmin(data64: np.ndarray, centroids64: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid assignment (ties to the lower index) and min distances."""
    n = data64.shape[0]
    assign = np.empty(n, dtype=np.int32)
    mind = np.empty(n, dtype=np.float64)
    c_norms = (centroids64 * centroids64).sum(axis=1)
    for start in range(0, n, _ASSIGN_CHUNK):
        stop = min(start + _ASSIGN_CHUNK, n)
        block = data64[start:stop]
        d = block @ (-2.0 * centroids64.T)
        d += c_norms[None, :]
        d += (block * block).sum(axis=1)[:, None]
        assign[start:stop] = np.argmin(d, axis=1)
        mind[start:stop] = d[np.arange(stop - start), assign[start:stop]]
    np.maximum(mind, 0.0, out=mind)
    return assign, mind


def _kmeanspp_init(data64: np.ndarray, b: int, rng: np.random.Generator) -> np.ndarray:
    n = data64.shape[0]
    centroids = np.empty((b, data64.shape[1]), dtype=np.float64)
    centroids[0] = data64[int(rng.integers(n))]
    d2 = ((data64 - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, b):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centroids[j] = data64[idx]
        np.minimum(d2, ((data64 - centroids[j]) ** 2).sum(axis=1), out=d2)
    return centroids


def kmeans(dataset, n_partitions: int, max_iters: int = 25, seed: int = 0) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Stops at the assignment fixpoint or after `max_iters` iterations.
    Inertia (sum of min squared centroid distances) is recorded once per
    assignment step and is non-increasing. Clusters that empty out are
    re-seeded from the farthest member of the largest cluster, so with at
    least B distinct points no returned partition is empty.
    """
    data = check_dataset(dataset)
    n, d = data.shape
    if not 1 <= n_partitions <= n:
        raise ValueError(f"n_partitions must be in [1, {n}], got {n_partitions}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    data64 = data.astype(np.float64)
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(data64, n_partitions, rng)

    inertia_history: list[float] = []
    prev_assign: np.ndarray | None = None
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        assign, mind = _assign_argmin(data64, centroids)
        inertia_history.append(float(mind.sum()))
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            converged = True
            break
        prev_assign = assign
        centroids = _update_centroids(data64, assign, centroids, n_partitions)

    # a max_iters cutoff can still leave empty clusters; repair before returning
    for _ in range(n_partitions):
        assign, _ = _assign_argmin(data64, centroids)
        counts = np.bincount(assign, minlength=n_partitions)
        if (counts > 0).all():
            break
        centroids = _repair_empty(data64, assign, counts, centroids)

    return KMeansResult(
        centroids=centroids.astype(np.float32),
        inertia_history=inertia_history,
        n_iter=n_iter,
        converged=converged,
    )


def _update_centroids(data64, assign, centroids, b) -> np.ndarray:
    counts = np.bincount(assign, minlength=b)
    sums = np.empty((b, data64.shape[1]), dtype=np.float64)
    for j in range(data64.shape[1]):
        sums[:, j] = np.bincount(assign, weights=data64[:, j], minlength=b)
    out = centroids.copy()
    nonempty = counts > 0
    out[nonempty] = sums[nonempty] / counts[nonempty, None]
    if not nonempty.all():
        out = _repair_empty(data64, assign.copy(), counts.copy(), out)
    return out


def _repair_empty(data64, assign, counts, centroids) -> np.ndarray:
    """Re-seed each empty cluster from the farthest point of the largest one."""
    out = centroids.copy()
    for b_empty in np.flatnonzero(counts == 0):
        largest = int(counts.argmax())
        if counts[largest] <= 1:
            break
        member_idx = np.flatnonzero(assign == largest)
        far = member_idx[
            ((data64[member_idx] - out[largest]) ** 2).sum(axis=1).argmax()
        ]
        out[b_empty] = data64[far]
        assign[far] = b_empty
        counts[largest] -= 1
        counts[b_empty] = 1
    return out


def assign_hard(dataset, centroids) -> PartitionLayout:
    """Put every point in the partition of its nearest centroid."""
    data = check_dataset(dataset)
    cents = np.asarray(centroids, dtype=np.float32)
    if cents.ndim != 2 or cents.shape[1] != data.shape[1]:
        raise ValueError(f"centroids must be (B, {data.shape[1]}), got {cents.shape}")
    assign, _ = _assign_argmin(data.astype(np.float64), cents.astype(np.float64))
    members = _group_members(assign, cents.shape[0])
    return PartitionLayout(centroids=cents, members=members, kind="hard", home=assign)


def assign_fuzzy(dataset, centroids) -> PartitionLayout:
    """Put every point in the partitions of its two nearest centroids."""
    data = check_dataset(dataset)
    cents = np.asarray(centroids, dtype=np.float32)
    if cents.ndim != 2 or cents.shape[1] != data.shape[1]:
        raise ValueError(f"centroids must be (B, {data.shape[1]}), got {cents.shape}")
    b = cents.shape[0]
    if b < 2:
        raise ValueError(f"fuzzy assignment needs B >= 2, got {b}")
    n = data.shape[0]
    data64 = data.astype(np.float64)
    cents64 = cents.astype(np.float64)
    top2 = np.empty((n, 2), dtype=np.int32)
    for start in range(0, n, _ASSIGN_CHUNK):
        stop = min(start + _ASSIGN_CHUNK, n)
        d = pairwise_l2_sq(data64[start:stop], cents64)
        # stable sort keeps the lower partition index on distance ties
        top2[start:stop] = np.argsort(d, axis=1, kind="stable")[:, :2]
    flat = top2.ravel()
    members = _group_members(flat, b, ids=np.repeat(np.arange(n, dtype=np.int32), 2))
    return PartitionLayout(centroids=cents, members=members, kind="fuzzy2", home=top2[:, 0].copy())


def _group_members(assign: np.ndarray, b: int, ids: np.ndarray | None = None) -> list:
    """Split ids into per-partition lists; each list stays sorted by id."""
    if ids is None:
        ids = np.arange(assign.shape[0], dtype=np.int32)
    order = np.argsort(assign, kind="stable")
    counts = np.bincount(assign, minlength=b)
    bounds = np.concatenate([[0], np.cumsum(counts)])
    grouped = ids[order]
    return [grouped[bounds[i]:bounds[i + 1]].copy() for i in range(b)]


def centroid_distances(query, centroids) -> np.ndarray:
    """Squared L2 distances from one query to every centroid (float64)."""
    cents = np.asarray(centroids, dtype=np.float64)
    q = check_vector(query, cents.shape[1])
    return pairwise_l2_sq(q[None, :], cents)[0]


def centroid_distances_batch(queries, centroids) -> np.ndarray:
    """Squared L2 distances from every query row to every centroid (float64)."""
    q = np.asarray(queries, dtype=np.float64)
    cents = np.asarray(centroids, dtype=np.float64)
    return pairwise_l2_sq(q, cents)
