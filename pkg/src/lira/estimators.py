"""Scikit-learn style estimators wrapping the partition index pipeline.

All three indexes follow the fit / kneighbors convention of
`sklearn.neighbors.NearestNeighbors` and inherit `get_params` /
`set_params`, so they compose with pipelines, cloning, and grid tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from .core import check_dataset
from .model import TrainConfig, batched_probs, build_training_set, init_model, train
from .partitioner import assign_fuzzy, assign_hard, centroid_distances_batch, kmeans
from .redundancy import apply_redundancy, build_plan
from .retrieval import ivf_from_dists, plan_from_probs, search


class _PartitionIndexBase(BaseEstimator):
    """Shared validation and kneighbors plumbing."""

    def _validate_fit_data(self, X) -> np.ndarray:
        X = check_array(X, dtype=np.float32, order="C")
        X = check_dataset(X)
        self.n_features_in_ = X.shape[1]
        return X

    def _validate_query_data(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_array(X, dtype=np.float32, order="C")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"query dimension {X.shape[1]} != fitted dimension {self.n_features_in_}")
        return X

    def _check_fitted(self) -> None:
        if not hasattr(self, "layout_"):
            raise NotFittedError(
                f"This {type(self).__name__} instance is not fitted yet; "
                "call 'fit' before querying.")

    def _run_queries(self, X, plans, n_neighbors, return_distance):
        ids = np.full((X.shape[0], n_neighbors), -1, dtype=np.int64)
        dists = np.full((X.shape[0], n_neighbors), np.inf, dtype=np.float64)
        for i, plan in enumerate(plans):
            result, _ = search(self.layout_, self._fit_X, plan, X[i], n_neighbors)
            ids[i, :result.ids.size] = result.ids
            dists[i, :result.ids.size] = result.dists
        return (dists, ids) if return_distance else ids


class IvfIndex(_PartitionIndexBase):
    """Inverted-file index probing the nprobe nearest partitions of a query.

    Parameters
    ----------
    n_partitions : number of K-Means partitions (B).
    nprobe : default number of partitions probed per query.
    n_neighbors : default k returned by `kneighbors`.
    kmeans_iters : Lloyd iteration cap.
    random_state : seed for K-Means initialization.
    """

    def __init__(self, n_partitions=64, nprobe=8, n_neighbors=10,
                 kmeans_iters=25, random_state=0):
        self.n_partitions = n_partitions
        self.nprobe = nprobe
        self.n_neighbors = n_neighbors
        self.kmeans_iters = kmeans_iters
        self.random_state = random_state

    def _build_layout(self, X, centroids):
        return assign_hard(X, centroids)

    def fit(self, X, y=None):
        X = self._validate_fit_data(X)
        km = kmeans(X, self.n_partitions, max_iters=self.kmeans_iters,
                    seed=self.random_state)
        self.centroids_ = km.centroids
        self.inertia_history_ = km.inertia_history
        self.layout_ = self._build_layout(X, km.centroids)
        self._fit_X = X
        return self

    def kneighbors(self, X, n_neighbors=None, nprobe=None, return_distance=True):
        X = self._validate_query_data(X)
        k = n_neighbors if n_neighbors is not None else self.n_neighbors
        nprobe = min(nprobe if nprobe is not None else self.nprobe,
                     self.layout_.n_partitions)
        dists = centroid_distances_batch(X, self.centroids_)
        plans = [ivf_from_dists(dists[i], nprobe) for i in range(X.shape[0])]
        return self._run_queries(X, plans, k, return_distance)


class IvfFuzzyIndex(IvfIndex):
    """IVF variant storing every point in its two nearest partitions."""

    def _build_layout(self, X, centroids):
        return assign_fuzzy(X, centroids)


class LiraIndex(_PartitionIndexBase):
    """Learned partition index: probing model plus selective redundancy.

    `fit` runs the full construction pipeline: K-Means on a training
    subset, probing-model training on subset-internal neighbor labels,
    hard assignment of the full data, and duplication of the
    `redundancy_pct` percent of points with the largest predicted probe
    counts. `kneighbors` probes the partitions whose predicted
    probability exceeds `sigma`.

    Parameters
    ----------
    n_partitions : number of K-Means partitions (B).
    sigma : query-time probability threshold for probing a partition.
    redundancy_pct : percentage of points duplicated (eta); 0 disables.
    k_train : neighbor count used when labeling training points.
    train_size : subset size for K-Means and model training (None = all).
    batch_size, epochs, learning_rate : optimizer settings.
    n_neighbors : default k returned by `kneighbors`.
    kmeans_iters : Lloyd iteration cap.
    random_state : seed for every stochastic stage.
    """

    def __init__(self, n_partitions=64, sigma=0.5, redundancy_pct=3.0,
                 k_train=100, train_size=None, batch_size=512, epochs=10,
                 learning_rate=1e-3, n_neighbors=10, kmeans_iters=25,
                 random_state=0):
        self.n_partitions = n_partitions
        self.sigma = sigma
        self.redundancy_pct = redundancy_pct
        self.k_train = k_train
        self.train_size = train_size
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.n_neighbors = n_neighbors
        self.kmeans_iters = kmeans_iters
        self.random_state = random_state

    def fit(self, X, y=None):
        X = self._validate_fit_data(X)
        n = X.shape[0]
        rng = np.random.default_rng(self.random_state)
        if self.train_size is not None and self.train_size < n:
            train_ids = np.sort(rng.choice(n, size=self.train_size, replace=False))
        else:
            train_ids = np.arange(n)
        km = kmeans(X[train_ids], self.n_partitions,
                    max_iters=self.kmeans_iters, seed=self.random_state)
        self.centroids_ = km.centroids
        hard = assign_hard(X, km.centroids)
        ts = build_training_set(X, train_ids, hard, self.k_train)
        model = init_model(X.shape[1], self.n_partitions, seed=self.random_state)
        self.train_log_ = train(model, ts, TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs,
            learning_rate=self.learning_rate, seed=self.random_state))
        self.model_ = model
        self.train_ids_ = train_ids
        self.hard_layout_ = hard
        if self.redundancy_pct > 0:
            self.plan_ = build_plan(model, X, hard, self.redundancy_pct)
            self.layout_ = apply_redundancy(hard, self.plan_)
        else:
            self.plan_ = None
            self.layout_ = hard
        self._fit_X = X
        return self

    def kneighbors(self, X, n_neighbors=None, sigma=None, return_distance=True):
        X = self._validate_query_data(X)
        k = n_neighbors if n_neighbors is not None else self.n_neighbors
        sigma = sigma if sigma is not None else self.sigma
        probs = batched_probs(self.model_, X, self.centroids_)
        plans = [plan_from_probs(probs[i], sigma) for i in range(X.shape[0])]
        return self._run_queries(X, plans, k, return_distance)
