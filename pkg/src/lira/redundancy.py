"""Learned selective duplication of likely long-tail points.

Points whose predicted probe count is in the upper eta percentile get one
replica each, placed in the highest-probability partition that is not
already their home.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import check_dataset
from .model import ProbingModel, batched_probs
from .oracle import brute_force_knn_batch
from .partitioner import PartitionLayout, centroid_distances_batch

PICK_SIGMA = 0.5  # pick scoring always uses the training-time threshold


@dataclass
class RedundancyPlan:
    picks: np.ndarray    # int32 point ids, each duplicated exactly once
    targets: np.ndarray  # int32 replica partition per pick, never the home
    eta: float           # percentage of the dataset duplicated


def _pick_order(probs: np.ndarray) -> np.ndarray:
    """Ids ordered by descending predicted probe count.

    Ties break by larger total probability mass, then by smaller id.
    """
    score = (probs >= PICK_SIGMA).sum(axis=1)
    mass = probs.sum(axis=1)
    ids = np.arange(probs.shape[0])
    return np.lexsort((ids, -mass, -score))


def _n_picks(eta: float, n: int) -> int:
    if not 0.0 < eta <= 100.0:
        raise ValueError(f"eta must be in (0, 100], got {eta}")
    return max(1, math.floor(eta / 100.0 * n))


def pick_candidates(model: ProbingModel, dataset, layout: PartitionLayout,
                    eta: float) -> np.ndarray:
    """Top floor(eta% * N) ids by predicted probe count (minimum one pick)."""
    data = check_dataset(dataset)
    probs = batched_probs(model, data, layout.centroids)
    return _pick_order(probs)[: _n_picks(eta, data.shape[0])].astype(np.int32)


def choose_replica_partition(probs, home: int) -> int:
    """Highest-probability partition, or the runner-up when that is the home."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    if p.shape[0] < 2:
        raise ValueError("need at least two partitions to place a replica")
    order = np.argsort(-p, kind="stable")  # ties go to the lower index
    r1, r2 = int(order[0]), int(order[1])
    return r1 if r1 != home else r2


def build_plan(model: ProbingModel, dataset, layout: PartitionLayout,
               eta: float) -> RedundancyPlan:
    """Pick candidates and choose each one's replica partition in one pass."""
    data = check_dataset(dataset)
    probs = batched_probs(model, data, layout.centroids)
    picks = _pick_order(probs)[: _n_picks(eta, data.shape[0])]
    top2 = np.argsort(-probs[picks], axis=1, kind="stable")[:, :2]
    homes = layout.home[picks]
    targets = np.where(top2[:, 0] != homes, top2[:, 0], top2[:, 1])
    return RedundancyPlan(picks=picks.astype(np.int32),
                          targets=targets.astype(np.int32), eta=float(eta))


def apply_redundancy(layout: PartitionLayout, plan: RedundancyPlan) -> PartitionLayout:
    """Hard layout plus one replica entry per picked point; homes unchanged."""
    if layout.kind != "hard":
        raise ValueError(f"redundancy applies to a hard layout, got {layout.kind!r}")
    picks = np.asarray(plan.picks, dtype=np.int64)
    targets = np.asarray(plan.targets, dtype=np.int64)
    if picks.shape != targets.shape:
        raise ValueError("picks and targets must have equal length")
    if np.unique(picks).size != picks.size:
        raise ValueError("duplicate ids in redundancy plan")
    if picks.size and (picks.min() < 0 or picks.max() >= layout.n_points):
        raise ValueError("pick id outside the layout's id range")
    if (targets == layout.home[picks]).any():
        raise ValueError("replica target equals the point's home partition")
    if picks.size and (targets.min() < 0 or targets.max() >= layout.n_partitions):
        raise ValueError("replica target outside the partition range")

    members = [m.copy() for m in layout.members]
    order = np.lexsort((picks, targets))
    sorted_targets = targets[order]
    sorted_picks = picks[order].astype(np.int32)
    bounds = np.searchsorted(sorted_targets, np.arange(layout.n_partitions + 1))
    for b in range(layout.n_partitions):
        extra = sorted_picks[bounds[b]:bounds[b + 1]]
        if extra.size:
            members[b] = np.concatenate([members[b], extra])
    return PartitionLayout(centroids=layout.centroids, members=members,
                           kind="redundant", home=layout.home, plan=plan)


@dataclass
class LongTailOracle:
    """Exhaustively computed long-tail structure of a dataset (desk scale only).

    For every point treated as a query over the whole dataset (self
    excluded): its optimal probe count, and for every point that is some
    query's sole neighbor in a partition, the partitions where that query
    had more than one neighbor.
    """

    nprobe_opt: np.ndarray   # (n,) optimal probe count of every point
    points: np.ndarray       # long-tail point ids with non-empty replica sets
    indptr: np.ndarray       # CSR bounds into `partitions`, len(points) + 1
    partitions: np.ndarray   # concatenated replica partition ids

    def replica_set(self, idx: int) -> np.ndarray:
        return self.partitions[self.indptr[idx]:self.indptr[idx + 1]]


def oracle_long_tail(dataset, layout: PartitionLayout, k: int,
                     chunk: int = 512) -> LongTailOracle:
    """Brute-force pass deriving per-point probe optima and replica sets.

    Cost is O(n^2 d); intended for analysis at desk scale.
    """
    data = check_dataset(dataset)
    if layout.kind != "hard":
        raise ValueError(f"long-tail analysis needs a hard layout, got {layout.kind!r}")
    n = data.shape[0]
    b = layout.n_partitions
    all_knn, _ = brute_force_knn_batch(data, data, k, exclude=np.arange(n))
    nprobe_opt = np.empty(n, dtype=np.int32)
    pair_points: list[np.ndarray] = []
    pair_parts: list[np.ndarray] = []
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        knn = all_knn[start:stop]
        homes = layout.home[knn]
        rows = stop - start
        counts = np.zeros((rows, b), dtype=np.int32)
        np.add.at(counts, (np.repeat(np.arange(rows), k), homes.ravel()), 1)
        nprobe_opt[start:stop] = (counts > 0).sum(axis=1)
        count_at = counts[np.arange(rows)[:, None], homes]
        tail_mask = count_at == 1
        rep_mask = counts > 1
        for r in np.flatnonzero(tail_mask.any(axis=1) & rep_mask.any(axis=1)):
            tails = knn[r][tail_mask[r]]
            reps = np.flatnonzero(rep_mask[r])
            pair_points.append(np.repeat(tails, reps.size))
            pair_parts.append(np.tile(reps, tails.size))
    if pair_points:
        pts = np.concatenate(pair_points).astype(np.int64)
        prt = np.concatenate(pair_parts).astype(np.int64)
        pairs = np.unique(np.stack([pts, prt], axis=1), axis=0)
        points, first = np.unique(pairs[:, 0], return_index=True)
        indptr = np.concatenate([first, [pairs.shape[0]]])
        partitions = pairs[:, 1].astype(np.int32)
    else:
        points = np.empty(0, dtype=np.int64)
        indptr = np.zeros(1, dtype=np.int64)
        partitions = np.empty(0, dtype=np.int32)
    return LongTailOracle(nprobe_opt=nprobe_opt, points=points.astype(np.int32),
                          indptr=indptr.astype(np.int64), partitions=partitions)


def _rank_positions(scores_desc: np.ndarray) -> np.ndarray:
    """rank[i, p] = 0-based position of partition p when sorted by descending score."""
    order = np.argsort(-scores_desc, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(order.shape[0])[:, None]
    ranks[rows, order] = np.arange(order.shape[1])[None, :]
    return ranks

def _pair_ranks(ranks: np.ndarray, oracle: LongTailOracle) -> tuple[np.ndarray, np.ndarray]:
    degrees = np.diff(oracle.indptr)
    row_of_pair = np.repeat(np.arange(oracle.points.shape[0]), degrees)
    return ranks[row_of_pair, oracle.partitions], degrees


def replica_recall_curve(model: ProbingModel, dataset, layout: PartitionLayout,
                         oracle: LongTailOracle, m_values,
                         seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Mean replica-set coverage of the top-M model partitions, with a random control.

    Points with empty replica sets are skipped (they never enter the
    oracle). Returns (model_curve, random_curve) over `m_values`.
    """
    pts = oracle.points
    if pts.size == 0:
        raise ValueError("oracle holds no long-tail points")
    probs = batched_probs(model, check_dataset(dataset)[pts], layout.centroids)
    model_ranks = _rank_positions(probs)
    rng = np.random.default_rng(seed)
    random_ranks = _rank_positions(rng.random(probs.shape))
    curves = []
    for ranks in (model_ranks, random_ranks):
        pair_rank, degrees = _pair_ranks(ranks, oracle)
        per_m = []
        for m in m_values:
            hits = np.add.reduceat((pair_rank < m).astype(np.int64), oracle.indptr[:-1])
            per_m.append(float((hits / degrees).mean()))
        curves.append(np.asarray(per_m))
    return curves[0], curves[1]


def hit_rate_curve(rank_source: str, model: ProbingModel | None, dataset,
                   layout: PartitionLayout, oracle: LongTailOracle,
                   m_values) -> np.ndarray:
    """Fraction of long-tail points whose top-M partitions touch their replica set.

    `rank_source` is "model" (probability order) or "distance"
    (centroid-distance order).
    """
    pts = oracle.points
    if pts.size == 0:
        raise ValueError("oracle holds no long-tail points")
    data = check_dataset(dataset)
    if rank_source == "model":
        if model is None:
            raise ValueError("model rank source requires a model")
        ranks = _rank_positions(batched_probs(model, data[pts], layout.centroids))
    elif rank_source == "distance":
        dists = centroid_distances_batch(data[pts], layout.centroids)
        ranks = _rank_positions(-dists)  # ascending distance
    else:
        raise ValueError(f"unknown rank source {rank_source!r}")
    pair_rank, _ = _pair_ranks(ranks, oracle)
    best = np.minimum.reduceat(pair_rank, oracle.indptr[:-1])
    return np.asarray([float((best < m).mean()) for m in m_values])
