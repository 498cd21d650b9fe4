import numpy as np
import pytest

from lira import assign_hard, gen_synthetic, kmeans
from lira.core import gen_synthetic_queries
from lira.partitioner import PartitionLayout


@pytest.fixture(scope="session")
def small_corpus():
    """(data, queries): 2000 + 200 rows of a 16-d mixture with overlap."""
    data = gen_synthetic(2000, 16, 8, 0.25, seed=11)
    queries = gen_synthetic_queries(200, 16, 8, 0.25, seed=11)
    return data, queries


@pytest.fixture(scope="session")
def small_data(small_corpus):
    return small_corpus[0]


@pytest.fixture(scope="session")
def small_queries(small_corpus):
    return small_corpus[1]


@pytest.fixture(scope="session")
def small_layout(small_data):
    km = kmeans(small_data, 8, seed=3)
    return assign_hard(small_data, km.centroids)


def make_layout_from_home(home, n_partitions, dim=2):
    """Hard layout with prescribed homes; centroids are placeholders."""
    home = np.asarray(home, dtype=np.int32)
    members = [np.flatnonzero(home == b).astype(np.int32) for b in range(n_partitions)]
    centroids = np.zeros((n_partitions, dim), dtype=np.float32)
    return PartitionLayout(centroids=centroids, members=members, kind="hard", home=home)
