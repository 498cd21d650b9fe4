"""Experiment harness: sweeps, waste/long-tail reports, per-query studies.

Every report is a deterministic function of its input artifacts and a
seed, and is written as a UTF-8 CSV whose first line is a comment
carrying a schema tag and a config hash. Wall-clock columns are the one
exception to byte-identical reruns.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import LogRecord, ProbingModel, batched_probs
from .oracle import (
    distance_rank_nprobe,
    knn_count_distribution,
    long_tail_stats,
    optimal_nprobe,
    probing_label,
)
from .partitioner import PartitionLayout, assign_hard, centroid_distances_batch, kmeans
from .retrieval import ivf_from_dists, plan_from_probs, recall_at_k, search, topn_from_probs

# default knob grids: sigma 0.10 .. 1.00 in steps of 0.05 for threshold
# probing, and the finer descending grid used for per-query minima
SIGMA_SWEEP = tuple(round(0.10 + 0.05 * i, 2) for i in range(19))
SIGMA_PER_QUERY = tuple(round(0.95 - 0.05 * i, 2) for i in range(19))

RANK_KINDS = ("ivf", "fuzzy", "lira_topn")


@dataclass
class Method:
    """A named, fully built search configuration entering a sweep."""

    name: str
    kind: str  # "ivf" | "fuzzy" | "lira_sigma" | "lira_topn"
    layout: PartitionLayout
    model: ProbingModel | None = None


@dataclass
class SweepRecord:
    method: str
    knob: float
    mean_recall: float
    mean_cmp: float
    mean_nprobe: float
    wall_clock_s: float


def _method_scores(method: Method, queries, dataset) -> np.ndarray:
    """Per-query planning scores: model probabilities or centroid distances."""
    if method.kind in ("lira_sigma", "lira_topn"):
        if method.model is None:
            raise ValueError(f"method {method.name!r} needs a trained model")
        return batched_probs(method.model, queries, method.layout.centroids)
    if method.kind in ("ivf", "fuzzy"):
        return centroid_distances_batch(queries, method.layout.centroids)
    raise ValueError(f"unknown method kind {method.kind!r}")


def _plan(method: Method, scores_row: np.ndarray, knob):
    if method.kind == "lira_sigma":
        return plan_from_probs(scores_row, float(knob))
    if method.kind == "lira_topn":
        return topn_from_probs(scores_row, int(knob))
    return ivf_from_dists(scores_row, int(knob),
                          strategy=f"{method.kind}({int(knob)})")


def tradeoff_sweep(methods, knob_grids, dataset, queries, gt_ids, k) -> list[SweepRecord]:
    """Evaluate every (method, knob) cell over all queries.

    Returns records sorted by method name then knob. Sweep-level sanity
    checks fire if rank-method recall ever decreases with nprobe or if
    threshold-method fan-out grows with sigma.
    """
    queries = np.asarray(queries, dtype=np.float32)
    gt = np.asarray(gt_ids)
    if gt.shape != (queries.shape[0], k):
        raise ValueError(f"ground truth must be ({queries.shape[0]}, {k}), got {gt.shape}")
    records: list[SweepRecord] = []
    for method in sorted(methods, key=lambda m: m.name):
        grid = knob_grids[method.name]
        scores = _method_scores(method, queries, dataset)
        method_records = []
        for knob in grid:
            t0 = time.perf_counter()
            recalls = np.empty(queries.shape[0])
            cmps = np.empty(queries.shape[0])
            nprobes = np.empty(queries.shape[0])
            for i in range(queries.shape[0]):
                plan = _plan(method, scores[i], knob)
                result, metrics = search(method.layout, dataset, plan, queries[i], k)
                recalls[i] = recall_at_k(result, gt[i], k)
                cmps[i] = metrics.cmp
                nprobes[i] = metrics.nprobe
            method_records.append(SweepRecord(
                method=method.name, knob=float(knob),
                mean_recall=float(recalls.mean()), mean_cmp=float(cmps.mean()),
                mean_nprobe=float(nprobes.mean()),
                wall_clock_s=time.perf_counter() - t0))
        _check_sweep_monotonicity(method, method_records)
        records.extend(sorted(method_records, key=lambda r: r.knob))
    return records


def _check_sweep_monotonicity(method: Method, records: list[SweepRecord]) -> None:
    ordered = sorted(records, key=lambda r: r.knob)
    for lo, hi in zip(ordered, ordered[1:]):
        if method.kind in RANK_KINDS and hi.mean_recall < lo.mean_recall - 1e-12:
            raise RuntimeError(
                f"{method.name}: mean recall dropped from {lo.mean_recall} to "
                f"{hi.mean_recall} when nprobe rose {lo.knob} -> {hi.knob}")
        if method.kind == "lira_sigma" and hi.mean_nprobe > lo.mean_nprobe + 1e-12:
            raise RuntimeError(
                f"{method.name}: mean nprobe grew from {lo.mean_nprobe} to "
                f"{hi.mean_nprobe} when sigma rose {lo.knob} -> {hi.knob}")


@dataclass
class ProbingWasteReport:
    """Per-query optimal vs distance-rank probe counts and their CDFs."""

    nprobe_opt: np.ndarray
    nprobe_dist: np.ndarray
    extra: np.ndarray
    cdf_nprobe: np.ndarray  # 1..B
    cdf_opt: np.ndarray     # fraction of queries with nprobe_opt <= value
    cdf_dist: np.ndarray


def probing_waste_report(queries, gt_ids, layout: PartitionLayout, k) -> ProbingWasteReport:
    queries = np.asarray(queries, dtype=np.float32)
    gt = np.asarray(gt_ids)
    b = layout.n_partitions
    dists = centroid_distances_batch(queries, layout.centroids)
    orders = np.argsort(dists, axis=1, kind="stable")
    n_opt = np.empty(queries.shape[0], dtype=np.int64)
    n_dist = np.empty(queries.shape[0], dtype=np.int64)
    for i in range(queries.shape[0]):
        counts = knn_count_distribution(layout, gt[i])
        n_opt[i] = optimal_nprobe(probing_label(counts))
        n_dist[i] = distance_rank_nprobe(counts, orders[i])
    values = np.arange(1, b + 1)
    return ProbingWasteReport(
        nprobe_opt=n_opt, nprobe_dist=n_dist, extra=n_dist - n_opt,
        cdf_nprobe=values,
        cdf_opt=(n_opt[None, :] <= values[:, None]).mean(axis=1),
        cdf_dist=(n_dist[None, :] <= values[:, None]).mean(axis=1))


def long_tail_report(dataset, queries, gt_ids, k, b_values,
                     kmeans_iters: int = 25, seed: int = 0) -> dict[int, np.ndarray]:
    """Histogram of the smallest nonzero per-partition kNN count, per B.

    Rebuilds K-Means and the hard layout for every partition count in
    `b_values`; histogram index m counts queries whose minimum nonzero
    count is m (indices 0..k, index 0 always empty).
    """
    gt = np.asarray(gt_ids)
    out: dict[int, np.ndarray] = {}
    for b in b_values:
        km = kmeans(dataset, b, max_iters=kmeans_iters, seed=seed)
        layout = assign_hard(dataset, km.centroids)
        mins = np.empty(gt.shape[0], dtype=np.int64)
        for i in range(gt.shape[0]):
            counts = knn_count_distribution(layout, gt[i])
            mins[i] = long_tail_stats(counts).min_nonzero
        out[int(b)] = np.bincount(mins, minlength=k + 1)
    return out


@dataclass
class PerQueryRecord:
    query: int
    a_cmp: int
    a_nprobe: int
    b_cmp: int
    b_nprobe: int
    cmp_ratio: float
    nprobe_ratio: float


@dataclass
class PerQueryComparison:
    method_a: str
    method_b: str
    target_recall: float
    records: list[PerQueryRecord]
    excluded_a: int  # queries method_a cannot bring to the target recall
    excluded_b: int
    sample: list[PerQueryRecord]


def _per_query_grid(method: Method):
    if method.kind == "lira_sigma":
        return SIGMA_PER_QUERY  # descending sigma = increasing permissiveness
    return tuple(range(1, method.layout.n_partitions + 1))


def _minimal_knob_metrics(method, scores_row, query, gt_row, dataset, k, target, grid):
    """Least-permissive grid knob reaching the target recall, via binary search."""
    cache: dict[int, tuple[float, int, int]] = {}

    def evaluate(idx: int) -> tuple[float, int, int]:
        if idx not in cache:
            plan = _plan(method, scores_row, grid[idx])
            result, metrics = search(method.layout, dataset, plan, query, k)
            cache[idx] = (recall_at_k(result, gt_row, k), metrics.cmp, metrics.nprobe)
        return cache[idx]

    lo, hi = 0, len(grid) - 1
    if evaluate(hi)[0] < target:
        return None
    while lo < hi:
        mid = (lo + hi) // 2
        if evaluate(mid)[0] >= target:
            hi = mid
        else:
            lo = mid + 1
    _, cmp_, nprobe = evaluate(lo)
    return cmp_, nprobe


def per_query_comparison(method_a: Method, method_b: Method, dataset, queries,
                         gt_ids, target_recall: float, k: int,
                         sample_size: int = 100, seed: int = 0) -> PerQueryComparison:
    """Per-query minimal-cost ratios of method_b over method_a at equal recall.

    Queries that either method cannot bring to the target recall anywhere
    on its knob grid are excluded from the ratio records and counted.
    """
    queries = np.asarray(queries, dtype=np.float32)
    gt = np.asarray(gt_ids)
    scores_a = _method_scores(method_a, queries, dataset)
    scores_b = _method_scores(method_b, queries, dataset)
    grid_a = _per_query_grid(method_a)
    grid_b = _per_query_grid(method_b)
    records: list[PerQueryRecord] = []
    excluded_a = excluded_b = 0
    for i in range(queries.shape[0]):
        got_a = _minimal_knob_metrics(method_a, scores_a[i], queries[i], gt[i],
                                      dataset, k, target_recall, grid_a)
        got_b = _minimal_knob_metrics(method_b, scores_b[i], queries[i], gt[i],
                                      dataset, k, target_recall, grid_b)
        if got_a is None:
            excluded_a += 1
        if got_b is None:
            excluded_b += 1
        if got_a is None or got_b is None:
            continue
        records.append(PerQueryRecord(
            query=i, a_cmp=got_a[0], a_nprobe=got_a[1],
            b_cmp=got_b[0], b_nprobe=got_b[1],
            cmp_ratio=got_b[0] / got_a[0], nprobe_ratio=got_b[1] / got_a[1]))
    rng = np.random.default_rng(seed)
    if len(records) > sample_size:
        pick = np.sort(rng.choice(len(records), size=sample_size, replace=False))
        sample = [records[j] for j in pick]
    else:
        sample = list(records)
    return PerQueryComparison(
        method_a=method_a.name, method_b=method_b.name, target_recall=target_recall,
        records=records, excluded_a=excluded_a, excluded_b=excluded_b, sample=sample)


def _config_hash(*parts) -> str:
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode())
        h.update(b"\x00")
    return h.hexdigest()


def _write_csv(path, schema: str, config: str, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema=lira/{schema}/v1 config={config}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_sweep_csv(records: list[SweepRecord], path, config_parts=()) -> None:
    _write_csv(path, "sweep", _config_hash(*config_parts),
               ["method", "knob", "mean_recall", "mean_cmp", "mean_nprobe",
                "wall_clock_s"],
               [[r.method, r.knob, r.mean_recall, r.mean_cmp, r.mean_nprobe,
                 r.wall_clock_s] for r in records])


def write_probing_waste_csv(report: ProbingWasteReport, path, cdf_path,
                            config_parts=()) -> None:
    cfg = _config_hash(*config_parts)
    _write_csv(path, "probing_waste", cfg,
               ["query", "nprobe_opt", "nprobe_dist", "extra"],
               [[i, int(o), int(d), int(e)] for i, (o, d, e) in enumerate(
                   zip(report.nprobe_opt, report.nprobe_dist, report.extra))])
    _write_csv(cdf_path, "probing_waste_cdf", cfg,
               ["nprobe", "frac_opt_le", "frac_dist_le"],
               [[int(v), float(o), float(d)] for v, o, d in zip(
                   report.cdf_nprobe, report.cdf_opt, report.cdf_dist)])


def write_long_tail_csv(histograms: dict[int, np.ndarray], path, config_parts=()) -> None:
    rows = []
    for b in sorted(histograms):
        hist = histograms[b]
        rows += [[b, m, int(hist[m])] for m in range(1, hist.shape[0])]
    _write_csv(path, "long_tail", _config_hash(*config_parts),
               ["n_partitions", "min_nonzero", "queries"], rows)


def write_per_query_csv(cmp: PerQueryComparison, path, sample_path=None,
                        config_parts=()) -> None:
    cfg = _config_hash(*config_parts)
    header = ["query", "a_cmp", "a_nprobe", "b_cmp", "b_nprobe",
              "cmp_ratio", "nprobe_ratio"]

    def emit(target, rows):
        target = Path(target)
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# schema=lira/per_query/v1 config={cfg} "
                     f"method_a={cmp.method_a} method_b={cmp.method_b} "
                     f"target_recall={cmp.target_recall} "
                     f"excluded_a={cmp.excluded_a} excluded_b={cmp.excluded_b}\n")
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows([[r.query, r.a_cmp, r.a_nprobe, r.b_cmp, r.b_nprobe,
                               r.cmp_ratio, r.nprobe_ratio] for r in rows])

    emit(path, cmp.records)
    if sample_path is not None:
        emit(sample_path, cmp.sample)


def write_convergence_csv(log: list[LogRecord], path, config_parts=()) -> None:
    _write_csv(path, "convergence", _config_hash(*config_parts),
               ["step", "loss", "recall", "mean_nprobe", "hit_rate"],
               [[r.step, r.loss, r.recall, r.mean_nprobe, r.hit_rate] for r in log])


def write_replica_curves_csv(m_values, model_recall, random_recall, model_hit,
                             distance_hit, recall_path, hit_path,
                             config_parts=()) -> None:
    cfg = _config_hash(*config_parts)
    _write_csv(recall_path, "replica_recall", cfg,
               ["m", "model_recall", "random_recall"],
               [[int(m), float(a), float(b)] for m, a, b in zip(
                   m_values, model_recall, random_recall)])
    _write_csv(hit_path, "replica_hit_rate", cfg,
               ["m", "model_hit_rate", "distance_hit_rate"],
               [[int(m), float(a), float(b)] for m, a, b in zip(
                   m_values, model_hit, distance_hit)])
