import numpy as np
import pytest

from lira.core import (
    check_dataset,
    gen_synthetic,
    gen_synthetic_queries,
    l2_sq,
    pairwise_l2_sq,
    smallest_k,
)


class TestL2Sq:
    def test_identity(self):
        assert l2_sq((3.0, 4.0), (3.0, 4.0)) == 0.0

    def test_3_4_5_triangle(self):
        assert l2_sq((0.0, 0.0), (3.0, 4.0)) == 25.0

    def test_matches_scalar_reference_loop(self):
        """Random 128-d pair against a plain double-precision loop."""
        rng = np.random.default_rng(0)
        a = rng.standard_normal(128)
        b = rng.standard_normal(128)
        expected = 0.0
        for ai, bi in zip(a.tolist(), b.tolist()):
            expected += (ai - bi) ** 2
        assert l2_sq(a, b) == pytest.approx(expected, rel=1e-4)

    def test_symmetric_and_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = rng.standard_normal(8)
            b = rng.standard_normal(8)
            assert l2_sq(a, b) == l2_sq(b, a)
            assert l2_sq(a, b) >= 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            l2_sq((1.0, 2.0), (1.0, 2.0, 3.0))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            l2_sq((np.nan, 0.0), (0.0, 0.0))


class TestPairwise:
    def test_matches_elementwise(self):
        rng = np.random.default_rng(2)
        q = rng.standard_normal((5, 12))
        x = rng.standard_normal((7, 12))
        d = pairwise_l2_sq(q, x)
        for i in range(5):
            for j in range(7):
                assert d[i, j] == pytest.approx(l2_sq(q[i], x[j]), rel=1e-10, abs=1e-12)

    def test_clamps_rounding_to_zero(self):
        x = np.full((1, 4), 1e3)
        assert pairwise_l2_sq(x, x)[0, 0] >= 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            pairwise_l2_sq(np.zeros((2, 3)), np.zeros((2, 4)))


class TestSmallestK:
    def test_plain_selection(self):
        vals = np.array([5.0, 1.0, 3.0, 2.0])
        assert smallest_k(vals, 2).tolist() == [1, 3]

    def test_ties_prefer_smaller_index(self):
        vals = np.array([2.0, 1.0, 1.0, 1.0, 0.5])
        assert smallest_k(vals, 3).tolist() == [4, 1, 2]

    def test_k_equals_n_full_sort(self):
        vals = np.array([3.0, 1.0, 1.0])
        assert smallest_k(vals, 3).tolist() == [1, 2, 0]


class TestCheckDataset:
    def test_accepts_and_casts(self):
        out = check_dataset([[1, 2], [3, 4]])
        assert out.dtype == np.float32 and out.shape == (2, 2)

    @pytest.mark.parametrize("bad", [np.zeros((0, 3)), np.zeros((3, 0)), np.zeros(3)])
    def test_rejects_bad_shapes(self, bad):
        with pytest.raises(ValueError):
            check_dataset(bad)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="NaN or Inf"):
            check_dataset([[np.inf, 0.0]])


class TestGenSynthetic:
    def test_deterministic(self):
        a = gen_synthetic(100, 8, 4, 0.1, seed=7)
        b = gen_synthetic(100, 8, 4, 0.1, seed=7)
        assert a.tobytes() == b.tobytes()

    def test_single_cluster_zero_spread(self):
        data = gen_synthetic(50, 4, 1, 0.0, seed=5)
        assert np.all(data == data[0])

    def test_shape_and_dtype(self):
        data = gen_synthetic(10, 3, 2, 0.5, seed=0)
        assert data.shape == (10, 3) and data.dtype == np.float32

    @pytest.mark.parametrize("kwargs", [
        dict(n=0, d=3, clusters=1, spread=0.1),
        dict(n=10, d=0, clusters=1, spread=0.1),
        dict(n=10, d=3, clusters=11, spread=0.1),
        dict(n=10, d=3, clusters=0, spread=0.1),
        dict(n=10, d=3, clusters=2, spread=-1.0),
    ])
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ValueError):
            gen_synthetic(seed=0, **kwargs)


class TestGenSyntheticQueries:
    def test_deterministic_and_distinct_from_dataset(self):
        data = gen_synthetic(100, 8, 4, 0.0, seed=3)
        qa = gen_synthetic_queries(50, 8, 4, 0.0, seed=3)
        qb = gen_synthetic_queries(50, 8, 4, 0.0, seed=3)
        assert qa.tobytes() == qb.tobytes()
        # zero spread pins every sample to a component mean of the same mixture
        assert set(map(tuple, qa.tolist())) <= set(map(tuple, data.tolist()))

    def test_dataset_independent_of_query_count(self):
        a = gen_synthetic(100, 8, 4, 0.2, seed=3)
        gen_synthetic_queries(1, 8, 4, 0.2, seed=3)
        gen_synthetic_queries(500, 8, 4, 0.2, seed=3)
        b = gen_synthetic(100, 8, 4, 0.2, seed=3)
        assert a.tobytes() == b.tobytes()
