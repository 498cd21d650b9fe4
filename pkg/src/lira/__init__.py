"""Learned query-aware partition pruning for approximate nearest neighbor search.

An inverted-file style index whose probing decisions come from a trained
model instead of centroid-distance ranks, plus selective duplication of
long-tail points, IVF/IVFFuzzy baselines, and a benchmark harness.
"""

from .codecs import VecFormatError, read_vectors, write_vectors
from .core import gen_synthetic, l2_sq, pairwise_l2_sq
from .estimators import IvfFuzzyIndex, IvfIndex, LiraIndex
from .model import (
    ProbingModel,
    TrainConfig,
    TrainingSet,
    bce_loss,
    build_training_set,
    init_model,
    load_model,
    loss_gradients,
    predicted_nprobe,
    save_model,
    train,
)
from .oracle import (
    KnnResult,
    brute_force_knn,
    brute_force_knn_batch,
    compute_or_load_ground_truth,
    distance_rank_nprobe,
    knn_count_distribution,
    long_tail_stats,
    optimal_nprobe,
    probing_label,
)
from .partitioner import (
    KMeansResult,
    PartitionLayout,
    assign_fuzzy,
    assign_hard,
    centroid_distances,
    kmeans,
)
from .redundancy import (
    RedundancyPlan,
    apply_redundancy,
    build_plan,
    choose_replica_partition,
    hit_rate_curve,
    oracle_long_tail,
    pick_candidates,
    replica_recall_curve,
)
from .retrieval import (
    QueryMetrics,
    QueryPlan,
    dataset_fingerprint,
    load_index,
    plan_ivf,
    plan_lira,
    plan_lira_topn,
    recall_at_k,
    save_index,
    search,
)

__version__ = "0.1.0"

__all__ = [
    "IvfFuzzyIndex",
    "IvfIndex",
    "KMeansResult",
    "KnnResult",
    "LiraIndex",
    "PartitionLayout",
    "ProbingModel",
    "QueryMetrics",
    "QueryPlan",
    "RedundancyPlan",
    "TrainConfig",
    "TrainingSet",
    "VecFormatError",
    "apply_redundancy",
    "assign_fuzzy",
    "assign_hard",
    "bce_loss",
    "brute_force_knn",
    "brute_force_knn_batch",
    "build_plan",
    "build_training_set",
    "centroid_distances",
    "choose_replica_partition",
    "compute_or_load_ground_truth",
    "dataset_fingerprint",
    "distance_rank_nprobe",
    "gen_synthetic",
    "hit_rate_curve",
    "init_model",
    "kmeans",
    "knn_count_distribution",
    "l2_sq",
    "load_index",
    "load_model",
    "long_tail_stats",
    "loss_gradients",
    "optimal_nprobe",
    "oracle_long_tail",
    "pairwise_l2_sq",
    "pick_candidates",
    "plan_ivf",
    "plan_lira",
    "plan_lira_topn",
    "predicted_nprobe",
    "probing_label",
    "read_vectors",
    "recall_at_k",
    "replica_recall_curve",
    "save_index",
    "save_model",
    "search",
    "train",
    "write_vectors",
]
