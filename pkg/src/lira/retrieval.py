"""Query planning, top-k execution over partitions, and index persistence.

Planners pick which partitions to probe (learned threshold, learned
top-n, or centroid-distance rank); `search` scans every member of the
probed partitions exhaustively, deduplicates candidates by id, and
returns the k nearest. `cmp` counts every visited stored entry, so
replicas and fuzzy double-assignments inflate it even though results are
deduplicated.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import check_dataset, check_vector, pairwise_l2_sq, smallest_k
from .model import ProbingModel, model_from_bytes, model_to_bytes
from .oracle import KnnResult
from .partitioner import PartitionLayout, centroid_distances
from .redundancy import RedundancyPlan

_MAGIC = b"LIRA"
_VERSION = 1
_KIND_CODE = {"hard": 0, "fuzzy2": 1, "redundant": 2}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}
_FLAG_PLAN = 1
_FLAG_MODEL = 2


@dataclass
class QueryPlan:
    partitions: np.ndarray          # int32 probe order, non-empty, no duplicates
    strategy: str
    probs: np.ndarray | None = None


@dataclass
class QueryMetrics:
    cmp: int                        # stored entries visited, replicas counted per visit
    nprobe: int
    recall_at_k: float | None = None


def plan_from_probs(probs, sigma: float, strategy: str | None = None) -> QueryPlan:
    """Partitions whose probability exceeds sigma, in descending-probability order.

    Falls back to the single highest-probability partition when nothing
    clears the threshold. sigma = 1.0 is allowed and always falls back,
    which lets threshold sweeps run up to the grid's top end.
    """
    if not 0.0 < sigma <= 1.0:
        raise ValueError(f"sigma must be in (0, 1], got {sigma}")
    p = np.asarray(probs, dtype=np.float64).ravel()
    order = np.argsort(-p, kind="stable")
    chosen = order[p[order] > sigma]
    if chosen.size == 0:
        chosen = order[:1]
    return QueryPlan(partitions=chosen.astype(np.int32),
                     strategy=strategy or f"lira_sigma({sigma:g})",
                     probs=p[chosen])


def plan_lira(model: ProbingModel, query, centroids, sigma: float) -> QueryPlan:
    """Threshold plan from the probing model's probabilities for one query."""
    probs = model.forward(query, centroid_distances(query, centroids))
    return plan_from_probs(probs, sigma)


def topn_from_probs(probs, nprobe: int, strategy: str | None = None) -> QueryPlan:
    p = np.asarray(probs, dtype=np.float64).ravel()
    if not 1 <= nprobe <= p.shape[0]:
        raise ValueError(f"nprobe must be in [1, {p.shape[0]}], got {nprobe}")
    chosen = np.argsort(-p, kind="stable")[:nprobe]
    return QueryPlan(partitions=chosen.astype(np.int32),
                     strategy=strategy or f"lira_topn({nprobe})",
                     probs=p[chosen])


def plan_lira_topn(model: ProbingModel, query, centroids, nprobe: int) -> QueryPlan:
    """Fixed-fan-out plan taking the top-nprobe partitions by model probability."""
    probs = model.forward(query, centroid_distances(query, centroids))
    return topn_from_probs(probs, nprobe)


def ivf_from_dists(dists, nprobe: int, strategy: str | None = None) -> QueryPlan:
    d = np.asarray(dists, dtype=np.float64).ravel()
    if not 1 <= nprobe <= d.shape[0]:
        raise ValueError(f"nprobe must be in [1, {d.shape[0]}], got {nprobe}")
    chosen = np.argsort(d, kind="stable")[:nprobe]
    return QueryPlan(partitions=chosen.astype(np.int32),
                     strategy=strategy or f"ivf({nprobe})")


def plan_ivf(query, centroids, nprobe: int) -> QueryPlan:
    """Centroid-distance-rank plan: the nprobe nearest partitions, ascending."""
    return ivf_from_dists(centroid_distances(query, centroids), nprobe)


def search(layout: PartitionLayout, dataset, plan: QueryPlan, query,
           k: int) -> tuple[KnnResult, QueryMetrics]:
    """Scan the planned partitions and return the k nearest candidates.

    Candidates are deduplicated by id before the distance sort, so a
    point probed through both its home and a replica appears once in the
    result while still counting twice in `cmp`. With fewer than k
    candidates, all of them are returned. The per-partition scan is the
    seam where an intra-partition index would plug in; here it is always
    an exhaustive scan.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    parts = np.asarray(plan.partitions, dtype=np.int64)
    if parts.size == 0:
        raise ValueError("empty query plan")
    if np.unique(parts).size != parts.size:
        raise ValueError("query plan repeats a partition")
    if parts.min() < 0 or parts.max() >= layout.n_partitions:
        raise ValueError("query plan references an unknown partition")
    data = check_dataset(dataset)
    q = check_vector(query, data.shape[1])

    gathered = [layout.members[b] for b in parts]
    visited = np.concatenate(gathered) if gathered else np.empty(0, np.int32)
    metrics = QueryMetrics(cmp=int(visited.size), nprobe=int(parts.size))
    if visited.size == 0:
        return KnnResult(ids=np.empty(0, np.int32), dists=np.empty(0)), metrics
    cand = np.unique(visited)
    dists = pairwise_l2_sq(q[None, :], data[cand])[0]
    sel = smallest_k(dists, min(k, cand.size))
    return KnnResult(ids=cand[sel].astype(np.int32), dists=dists[sel]), metrics


def recall_at_k(result: KnnResult, gt_ids, k: int) -> float:
    """Fraction of the k ground-truth ids present in the result."""
    gt = np.asarray(gt_ids, dtype=np.int64).ravel()
    if gt.size != k:
        raise ValueError(f"ground truth must hold exactly k={k} ids, got {gt.size}")
    ids = np.asarray(result.ids if isinstance(result, KnnResult) else result,
                     dtype=np.int64).ravel()
    return float(np.intersect1d(ids, gt).size / k)


def dataset_fingerprint(dataset) -> int:
    """64-bit content hash binding an index file to its dataset."""
    arr = np.ascontiguousarray(dataset)
    h = hashlib.blake2b(digest_size=8)
    h.update(np.asarray(arr.shape, dtype=np.int64).tobytes())
    h.update(arr.tobytes())
    return int.from_bytes(h.digest(), "little")


def save_index(path, layout: PartitionLayout, dataset,
               model: ProbingModel | None = None) -> None:
    """Write the index file.

    Layout: magic, version, dataset fingerprint, B, d, kind, flags, the
    centroid block as d-prefixed float32 records, length-prefixed member
    id lists, then the optional redundancy-plan and model blocks. All
    integers little-endian.
    """
    path = Path(path)
    b, d = layout.centroids.shape
    flags = 0
    if layout.plan is not None:
        flags |= _FLAG_PLAN
    if model is not None:
        flags |= _FLAG_MODEL
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQIIII", _VERSION, dataset_fingerprint(dataset),
                             b, d, _KIND_CODE[layout.kind], flags))
        cents = np.ascontiguousarray(layout.centroids, dtype="<f4")
        for row in cents:
            fh.write(struct.pack("<i", d))
            fh.write(row.tobytes())
        for member in layout.members:
            fh.write(struct.pack("<I", member.size))
            fh.write(np.ascontiguousarray(member, dtype="<u4").tobytes())
        if layout.plan is not None:
            plan = layout.plan
            fh.write(struct.pack("<If", plan.picks.size, plan.eta))
            fh.write(np.ascontiguousarray(plan.picks, dtype="<u4").tobytes())
            fh.write(np.ascontiguousarray(plan.targets, dtype="<u4").tobytes())
        if model is not None:
            blob = model_to_bytes(model)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.raw):
            raise ValueError(f"{self.path}: truncated index file at byte {self.off}")
        out = self.raw[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()


def load_index(path, dataset) -> tuple[PartitionLayout, ProbingModel | None]:
    """Read an index file and rebind it to its dataset.

    The stored fingerprint must match the dataset; home assignments are
    reconstructed from the centroids.
    """
    from .partitioner import _assign_argmin

    path = Path(path)
    data = check_dataset(dataset)
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != _MAGIC:
        raise ValueError(f"{path}: not an index file (bad magic)")
    version, fingerprint, b, d, kind_code, flags = r.unpack("<IQIIII")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported index version {version}")
    if kind_code not in _KIND_NAME:
        raise ValueError(f"{path}: unknown layout kind code {kind_code}")
    if fingerprint != dataset_fingerprint(data):
        raise ValueError(f"{path}: dataset fingerprint mismatch")
    if d != data.shape[1]:
        raise ValueError(f"{path}: index dimension {d} != dataset dimension {data.shape[1]}")
    centroids = np.empty((b, d), dtype=np.float32)
    for i in range(b):
        (rec_d,) = r.unpack("<i")
        if rec_d != d:
            raise ValueError(f"{path}: centroid record {i} has dimension {rec_d}")
        centroids[i] = r.array("<f4", d)
    members = []
    for _ in range(b):
        (size,) = r.unpack("<I")
        members.append(r.array("<u4", size).astype(np.int32))
    plan = None
    if flags & _FLAG_PLAN:
        n_picks, eta = r.unpack("<If")
        picks = r.array("<u4", n_picks).astype(np.int32)
        targets = r.array("<u4", n_picks).astype(np.int32)
        plan = RedundancyPlan(picks=picks, targets=targets, eta=float(eta))
    model = None
    if flags & _FLAG_MODEL:
        (blob_len,) = r.unpack("<I")
        model = model_from_bytes(r.take(blob_len), label=f"{path} (embedded model)")
    if r.off != len(r.raw):
        raise ValueError(f"{path}: {len(r.raw) - r.off} trailing bytes")
    home, _ = _assign_argmin(data.astype(np.float64), centroids.astype(np.float64))
    layout = PartitionLayout(centroids=centroids, members=members,
                             kind=_KIND_NAME[kind_code], home=home, plan=plan)
    return layout, model
