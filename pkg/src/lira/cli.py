"""Command line front end orchestrating the index pipeline.

Subcommands: groundtruth, build, train, redundancy, query, bench,
analyze. Stages enforce their ordering (build -> train -> redundancy)
and every command is idempotent for a fixed config and seed. Heavy
imports happen inside the handlers so --threads can cap the BLAS pools
before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

DEFAULT_K = 100
DEFAULT_B = 64
DEFAULT_SIGMA = 0.5
DEFAULT_ETA = 3.0
DEFAULT_BATCH = 512
DEFAULT_EPOCHS = 10
DEFAULT_LR = 1e-3

INDEX_FILE = "index.lira"
REDUNDANT_INDEX_FILE = "index-redundant.lira"
MODEL_FILE = "model.lirm"
CONVERGENCE_FILE = "convergence.csv"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lira",
        description="Learned query-aware partition index for ANN search.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, queries: bool = True) -> None:
        p.add_argument("--out-dir", default=None,
                       help="artifact directory (env LIRA_OUT_DIR, default ./runs)")
        p.add_argument("--seed", type=int, default=0,
                       help="seed for every stochastic stage (default 0)")
        p.add_argument("--threads", type=int, default=None,
                       help="cap BLAS/OpenMP threads; 1 = deterministic mode")
        p.add_argument("--data", default=None,
                       help="dataset file (fvecs/bvecs), exclusive with --synthetic")
        p.add_argument("--format", default="fvecs", choices=("fvecs", "bvecs"),
                       help="dataset file format (default fvecs)")
        p.add_argument("--synthetic", default=None, metavar="N,D,CLUSTERS,SPREAD",
                       help="generate a seeded Gaussian-mixture dataset instead")
        p.add_argument("--k", type=int, default=DEFAULT_K,
                       help=f"neighbors per query (default {DEFAULT_K})")
        if queries:
            p.add_argument("--queries", default=None,
                           help="query file (fvecs/bvecs)")
            p.add_argument("--queries-format", default="fvecs",
                           choices=("fvecs", "bvecs"))
            p.add_argument("--synthetic-queries", type=int, default=1000,
                           help="held-out query count for --synthetic (default 1000)")

    p = sub.add_parser("groundtruth", help="compute and cache exact kNN ids/distances")
    common(p)
    p.set_defaults(func=cmd_groundtruth)

    p = sub.add_parser("build", help="K-Means partitions and the hard layout")
    common(p, queries=False)
    p.add_argument("--n-partitions", "-B", type=int, default=DEFAULT_B,
                   help=f"partition count (default {DEFAULT_B}, small-scale setting)")
    p.add_argument("--kmeans-iters", type=int, default=25,
                   help="Lloyd iteration cap (default 25)")
    p.add_argument("--train-sample", type=int, default=None,
                   help="subset size used for K-Means and training (default: all)")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="train the probing model on subset labels")
    common(p, queries=False)
    p.add_argument("--train-sample", type=int, default=None,
                   help="must match the build stage (default: all)")
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH,
                   help=f"mini-batch size (default {DEFAULT_BATCH})")
    p.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS,
                   help=f"training epochs (default {DEFAULT_EPOCHS})")
    p.add_argument("--lr", type=float, default=DEFAULT_LR,
                   help=f"Adam learning rate (default {DEFAULT_LR})")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("redundancy", help="duplicate predicted long-tail points")
    common(p, queries=False)
    p.add_argument("--eta", type=float, default=DEFAULT_ETA,
                   help=f"percent of points duplicated (default {DEFAULT_ETA}, "
                        "meta-index-only setting)")
    p.set_defaults(func=cmd_redundancy)

    p = sub.add_parser("query", help="run top-k queries and print ids/metrics")
    common(p)
    p.add_argument("--method", default="lira", choices=("lira", "ivf", "fuzzy"))
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA,
                   help=f"probability threshold (default {DEFAULT_SIGMA})")
    p.add_argument("--nprobe", type=int, default=8,
                   help="probe count for ivf/fuzzy (default 8)")
    p.add_argument("--query-index", type=int, default=0,
                   help="first query to run (default 0)")
    p.add_argument("--limit", type=int, default=1,
                   help="number of queries to run (default 1)")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("bench", help="trade-off sweep and per-query comparison CSVs")
    common(p)
    p.add_argument("--target-recall", type=float, default=0.98,
                   help="per-query comparison operating point (default 0.98)")
    p.add_argument("--scatter-sample", type=int, default=100,
                   help="rows in the scatter-plot sample CSV (default 100)")
    p.add_argument("--nprobe-grid", default=None,
                   help="comma-separated nprobe grid (default: powers of two up to B)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze",
                       help="probing-waste, long-tail, and replica-rank reports")
    common(p)
    p.add_argument("--reports", default="probing-waste,long-tail",
                   help="comma list from probing-waste,long-tail,replica")
    p.add_argument("--b-list", default="64,32,16,8",
                   help="partition counts for the long-tail report (default 64,32,16,8)")
    p.add_argument("--max-points", type=int, default=200_000,
                   help="refuse the O(n^2) replica report above this size")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 1
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get("LIRA_OUT_DIR") or "runs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_synthetic(spec: str) -> tuple[int, int, int, float]:
    parts = spec.split(",")
    if len(parts) != 4:
        raise ValueError(f"--synthetic expects N,D,CLUSTERS,SPREAD, got {spec!r}")
    return int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])


def _load_dataset(args, out: Path, with_queries: bool):
    """Materialize (dataset, queries) from files or the synthetic spec."""
    from .codecs import read_vectors, write_vectors
    from .core import gen_synthetic, gen_synthetic_queries

    if (args.data is None) == (args.synthetic is None):
        raise ValueError("provide exactly one of --data or --synthetic")
    if args.data is not None:
        data = read_vectors(args.data, args.format)
        queries = None
        if with_queries:
            if getattr(args, "queries", None) is None:
                raise ValueError("--queries is required with --data for this command")
            queries = read_vectors(args.queries, args.queries_format)
        return data, queries

    n, d, clusters, spread = _parse_synthetic(args.synthetic)
    data = gen_synthetic(n, d, clusters, spread, args.seed)
    write_vectors(data, out / "dataset.fvecs", "fvecs")
    queries = None
    if with_queries:
        n_queries = getattr(args, "synthetic_queries", 0)
        if n_queries:
            queries = gen_synthetic_queries(n_queries, d, clusters, spread, args.seed)
            write_vectors(queries, out / "queries.fvecs", "fvecs")
    return data, queries


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} is missing: run 'lira {stage}' first")
    return path


def _train_ids(args, n: int):
    import numpy as np

    sample = getattr(args, "train_sample", None)
    if sample is not None and sample < n:
        rng = np.random.default_rng(args.seed)
        return np.sort(rng.choice(n, size=sample, replace=False))
    return np.arange(n)


def cmd_groundtruth(args) -> int:
    from .oracle import compute_or_load_ground_truth

    out = _out_dir(args)
    data, queries = _load_dataset(args, out, with_queries=True)
    if queries is None or queries.shape[0] == 0:
        raise ValueError("ground truth needs at least one query")
    _, _, hit = compute_or_load_ground_truth(data, queries, args.k, out)
    print(f"ground truth for {queries.shape[0]} queries at k={args.k}: "
          f"{'cache hit' if hit else 'computed'}")
    return 0


def cmd_build(args) -> int:
    from .partitioner import assign_hard, kmeans
    from .retrieval import save_index

    out = _out_dir(args)
    data, _ = _load_dataset(args, out, with_queries=False)
    ids = _train_ids(args, data.shape[0])
    km = kmeans(data[ids], args.n_partitions, max_iters=args.kmeans_iters,
                seed=args.seed)
    layout = assign_hard(data, km.centroids)
    save_index(out / INDEX_FILE, layout, data)
    print(f"built hard layout: B={layout.n_partitions} over {layout.n_points} points "
          f"({km.n_iter} iterations, converged={km.converged})")
    return 0


def cmd_train(args) -> int:
    from .bench import write_convergence_csv
    from .model import TrainConfig, build_training_set, init_model, save_model, train
    from .retrieval import load_index

    out = _out_dir(args)
    data, _ = _load_dataset(args, out, with_queries=False)
    layout, _ = load_index(_require(out / INDEX_FILE, "build"), data)
    ids = _train_ids(args, data.shape[0])
    ts = build_training_set(data, ids, layout, args.k)
    model = init_model(data.shape[1], layout.n_partitions, seed=args.seed)
    log = train(model, ts, TrainConfig(batch_size=args.batch_size,
                                       epochs=args.epochs,
                                       learning_rate=args.lr, seed=args.seed))
    save_model(model, out / MODEL_FILE)
    write_convergence_csv(log, out / CONVERGENCE_FILE,
                          config_parts=("train", args.seed, args.k, args.epochs,
                                        args.batch_size, args.lr, ids.size))
    final = log[-1]
    print(f"trained probing model: {final.step} steps, loss={final.loss:.4f}, "
          f"label recall={final.recall:.4f}")
    return 0


def cmd_redundancy(args) -> int:
    from .model import load_model
    from .redundancy import apply_redundancy, build_plan
    from .retrieval import load_index, save_index

    out = _out_dir(args)
    data, _ = _load_dataset(args, out, with_queries=False)
    layout, _ = load_index(_require(out / INDEX_FILE, "build"), data)
    model = load_model(_require(out / MODEL_FILE, "train"))
    plan = build_plan(model, data, layout, args.eta)
    redundant = apply_redundancy(layout, plan)
    save_index(out / REDUNDANT_INDEX_FILE, redundant, data, model=model)
    print(f"applied redundancy: eta={args.eta}% -> {plan.picks.size} replicas, "
          f"{redundant.total_entries} stored entries")
    return 0


def _load_query_artifacts(args, out: Path, data):
    """Layout and model for the query/bench stages, preferring the redundant index."""
    from .retrieval import load_index

    if (out / REDUNDANT_INDEX_FILE).exists():
        layout, model = load_index(out / REDUNDANT_INDEX_FILE, data)
    else:
        layout, model = load_index(_require(out / INDEX_FILE, "build"), data)
    if model is None and (out / MODEL_FILE).exists():
        from .model import load_model

        model = load_model(out / MODEL_FILE)
    return layout, model


def cmd_query(args) -> int:
    from .oracle import compute_or_load_ground_truth
    from .partitioner import assign_fuzzy
    from .retrieval import plan_ivf, plan_lira, recall_at_k, search

    out = _out_dir(args)
    data, queries = _load_dataset(args, out, with_queries=True)
    if queries is None or queries.shape[0] == 0:
        raise ValueError("no queries given")
    layout, model = _load_query_artifacts(args, out, data)
    if args.method == "lira" and model is None:
        raise FileNotFoundError("probing model is missing: run 'lira train' first")
    if args.method == "fuzzy":
        layout = assign_fuzzy(data, layout.centroids)
    gt_ids, _, _ = compute_or_load_ground_truth(data, queries, args.k, out)

    stop = min(args.query_index + args.limit, queries.shape[0])
    for qi in range(args.query_index, stop):
        q = queries[qi]
        if args.method == "lira":
            plan = plan_lira(model, q, layout.centroids, args.sigma)
        else:
            plan = plan_ivf(q, layout.centroids, args.nprobe)
        result, metrics = search(layout, data, plan, q, args.k)
        metrics.recall_at_k = recall_at_k(result, gt_ids[qi], args.k)
        print(f"query {qi} [{plan.strategy}] recall@{args.k}={metrics.recall_at_k:.4f} "
              f"cmp={metrics.cmp} nprobe={metrics.nprobe}")
        print("  ids:   " + " ".join(str(i) for i in result.ids[:10])
              + (" ..." if result.ids.size > 10 else ""))
        print("  dists: " + " ".join(f"{d:.4f}" for d in result.dists[:10])
              + (" ..." if result.ids.size > 10 else ""))
    return 0


def _default_nprobe_grid(b: int) -> list[int]:
    grid = []
    p = 1
    while p < b:
        grid.append(p)
        p *= 2
    grid.append(b)
    return grid


def cmd_bench(args) -> int:
    from .bench import (
        SIGMA_SWEEP,
        Method,
        per_query_comparison,
        tradeoff_sweep,
        write_per_query_csv,
        write_sweep_csv,
    )
    from .oracle import compute_or_load_ground_truth
    from .partitioner import assign_fuzzy

    out = _out_dir(args)
    data, queries = _load_dataset(args, out, with_queries=True)
    if queries is None or queries.shape[0] == 0:
        raise ValueError("bench needs queries")
    layout, model = _load_query_artifacts(args, out, data)
    if model is None:
        raise FileNotFoundError("probing model is missing: run 'lira train' first")
    from .retrieval import load_index

    hard, _ = load_index(_require(out / INDEX_FILE, "build"), data)
    fuzzy = assign_fuzzy(data, hard.centroids)
    gt_ids, _, _ = compute_or_load_ground_truth(data, queries, args.k, out)

    if args.nprobe_grid:
        nprobe_grid = [int(x) for x in args.nprobe_grid.split(",")]
    else:
        nprobe_grid = _default_nprobe_grid(hard.n_partitions)
    methods = [
        Method("ivf", "ivf", hard),
        Method("ivf_fuzzy", "fuzzy", fuzzy),
        Method("lira", "lira_sigma", layout, model),
    ]
    grids = {"ivf": nprobe_grid, "ivf_fuzzy": nprobe_grid, "lira": list(SIGMA_SWEEP)}
    records = tradeoff_sweep(methods, grids, data, queries, gt_ids, args.k)
    cfg = (args.seed, args.k, hard.n_partitions, queries.shape[0])
    write_sweep_csv(records, out / "sweep.csv", config_parts=cfg)

    comparison = per_query_comparison(
        methods[0], methods[2], data, queries, gt_ids,
        args.target_recall, args.k, sample_size=args.scatter_sample, seed=args.seed)
    write_per_query_csv(comparison, out / "per_query.csv",
                        out / "per_query_sample.csv", config_parts=cfg)
    print(f"bench: {len(records)} sweep cells -> {out / 'sweep.csv'}")
    print(f"bench: {len(comparison.records)} compared queries "
          f"(excluded ivf={comparison.excluded_a} lira={comparison.excluded_b}) "
          f"-> {out / 'per_query.csv'}")
    return 0


def cmd_analyze(args) -> int:
    from .bench import (
        long_tail_report,
        probing_waste_report,
        write_long_tail_csv,
        write_probing_waste_csv,
        write_replica_curves_csv,
    )
    from .oracle import compute_or_load_ground_truth
    from .retrieval import load_index

    out = _out_dir(args)
    reports = {r.strip() for r in args.reports.split(",") if r.strip()}
    unknown = reports - {"probing-waste", "long-tail", "replica"}
    if unknown:
        raise ValueError(f"unknown reports: {sorted(unknown)}")
    data, queries = _load_dataset(args, out, with_queries=True)
    if queries is None or queries.shape[0] == 0:
        raise ValueError("analyze needs queries")
    gt_ids, _, _ = compute_or_load_ground_truth(data, queries, args.k, out)
    hard, _ = load_index(_require(out / INDEX_FILE, "build"), data)
    cfg = (args.seed, args.k, hard.n_partitions, queries.shape[0])

    if "probing-waste" in reports:
        report = probing_waste_report(queries, gt_ids, hard, args.k)
        write_probing_waste_csv(report, out / "probing_waste.csv",
                                out / "probing_waste_cdf.csv", config_parts=cfg)
        print(f"analyze: probing waste (mean extra={report.extra.mean():.2f}) "
              f"-> {out / 'probing_waste.csv'}")
    if "long-tail" in reports:
        b_values = [int(x) for x in args.b_list.split(",")]
        hists = long_tail_report(data, queries, gt_ids, args.k, b_values,
                                 seed=args.seed)
        write_long_tail_csv(hists, out / "long_tail.csv", config_parts=cfg)
        print(f"analyze: long-tail histograms for B in {b_values} "
              f"-> {out / 'long_tail.csv'}")
    if "replica" in reports:
        if data.shape[0] > args.max_points:
            raise ValueError(
                f"replica report is O(n^2) and n={data.shape[0]} exceeds "
                f"--max-points={args.max_points}")
        from .model import load_model
        from .redundancy import hit_rate_curve, oracle_long_tail, replica_recall_curve

        model = load_model(_require(out / MODEL_FILE, "train"))
        oracle = oracle_long_tail(data, hard, args.k)
        m_values = list(range(1, hard.n_partitions + 1))
        model_recall, random_recall = replica_recall_curve(
            model, data, hard, oracle, m_values, seed=args.seed)
        model_hit = hit_rate_curve("model", model, data, hard, oracle, m_values)
        dist_hit = hit_rate_curve("distance", None, data, hard, oracle, m_values)
        write_replica_curves_csv(m_values, model_recall, random_recall,
                                 model_hit, dist_hit,
                                 out / "replica_recall.csv",
                                 out / "replica_hit_rate.csv", config_parts=cfg)
        print(f"analyze: replica-rank curves over {oracle.points.size} long-tail "
              f"points -> {out / 'replica_recall.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
