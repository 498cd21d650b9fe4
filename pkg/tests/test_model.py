import hashlib

import numpy as np
import pytest

from lira.core import gen_synthetic
from lira.model import (
    PARAM_NAMES,
    ProbingModel,
    TrainConfig,
    batch_loss,
    bce_loss,
    build_training_set,
    init_model,
    load_model,
    loss_gradients,
    model_to_bytes,
    predicted_nprobe,
    save_model,
    train,
)
from lira.oracle import brute_force_knn_batch, knn_count_distribution, probing_label
from lira.partitioner import assign_hard, centroid_distances_batch, kmeans


def tiny_model(seed=0):
    return init_model(6, 5, width_q=(16, 8), width_i=(8, 8), width_p=16, seed=seed)


def random_batch(model, n=8, seed=0):
    rng = np.random.default_rng(seed)
    queries = rng.standard_normal((n, model.dim)).astype(np.float32)
    dists = (rng.random((n, model.n_partitions)) * 3).astype(np.float32)
    labels = (rng.random((n, model.n_partitions)) < 0.4).astype(np.uint8)
    labels[labels.sum(axis=1) == 0, 0] = 1
    return queries, dists, labels


class TestForward:
    def test_zero_final_layer_gives_half_everywhere(self):
        model = tiny_model()
        model.params["wp2"][:] = 0
        model.params["bp2"][:] = 0
        q, i, _ = random_batch(model)
        np.testing.assert_array_equal(model.forward_batch(q, i), 0.5)

    def test_deterministic(self):
        model = tiny_model()
        q, i, _ = random_batch(model)
        a = model.forward_batch(q, i)
        b = model.forward_batch(q, i)
        assert a.tobytes() == b.tobytes()

    def test_outputs_strictly_inside_unit_interval(self):
        model = tiny_model()
        q, i, _ = random_batch(model, n=64)
        p = model.forward_batch(q, i)
        assert (p > 0).all() and (p < 1).all()

    def test_dimension_mismatch(self):
        model = tiny_model()
        with pytest.raises(ValueError):
            model.forward(np.zeros(7), np.zeros(5))
        with pytest.raises(ValueError):
            model.forward(np.zeros(6), np.zeros(4))

    def test_non_finite_input(self):
        model = tiny_model()
        with pytest.raises(ValueError, match="non-finite"):
            model.forward(np.full(6, np.nan), np.zeros(5))

    def test_input_perturbation_matches_chain_rule(self):
        """Central differences on one query coordinate vs a test-side Jacobian."""
        model = tiny_model()
        rng = np.random.default_rng(5)
        q = rng.standard_normal(6)
        i = rng.random(5) * 3

        p64 = {k: v.astype(np.float64) for k, v in model.params.items()}
        qn = (q - model.q_mean) / model.q_std
        inn = (i - model.i_mean) / model.i_std
        aq = qn @ p64["wq1"] + p64["bq1"]
        xq = np.maximum(aq, 0) @ p64["wq2"] + p64["bq2"]
        ai = inn @ p64["wi1"] + p64["bi1"]
        xi = np.maximum(ai, 0) @ p64["wi2"] + p64["bi2"]
        cat = np.concatenate([xq, xi])
        ap = cat @ p64["wp1"] + p64["bp1"]
        logits = np.maximum(ap, 0) @ p64["wp2"] + p64["bp2"]
        probs = 1 / (1 + np.exp(-logits))

        for coord in (0, 3, 5):
            v = np.zeros(6)
            v[coord] = 1.0 / model.q_std[coord]
            da = v @ p64["wq1"]
            dxq = (da * (aq > 0)) @ p64["wq2"]
            dap = np.concatenate([dxq, np.zeros(8)]) @ p64["wp1"]
            dlogit = (dap * (ap > 0)) @ p64["wp2"]
            jac = probs * (1 - probs) * dlogit

            eps = 1e-5
            hi, lo = q.copy(), q.copy()
            hi[coord] += eps
            lo[coord] -= eps
            fd = (model.forward(hi, i) - model.forward(lo, i)) / (2 * eps)
            np.testing.assert_allclose(fd, jac, rtol=1e-4, atol=1e-8)


class TestBceLoss:
    def test_perfect_prediction_near_zero(self):
        assert bce_loss([1, 0], [1 - 1e-7, 1e-7]) == pytest.approx(0.0, abs=1e-5)

    def test_uninformative_prediction(self):
        assert bce_loss([1, 0], [0.5, 0.5]) == pytest.approx(2 * np.log(2), rel=1e-12)

    def test_matches_reference_formula(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            y = (rng.random(9) < 0.5).astype(float)
            p = rng.uniform(0.01, 0.99, 9)
            expected = -sum(yi * np.log(pi) + (1 - yi) * np.log(1 - pi)
                            for yi, pi in zip(y.tolist(), p.tolist()))
            assert bce_loss(y, p) == pytest.approx(expected, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            bce_loss([1, 0], [0.5, 0.5, 0.5])


class TestGradients:
    def test_final_layer_matches_logistic_identity(self):
        """bias gradient of the output layer is the mean sigmoid residual."""
        model = tiny_model()
        q, i, y = random_batch(model, n=6)
        probs = model.forward_batch(q, i)
        _, grads = loss_gradients(model, q, i, y)
        np.testing.assert_allclose(grads["bp2"], (probs - y).mean(axis=0), rtol=1e-12)

    def test_duplicated_example_same_gradient(self):
        model = tiny_model()
        q, i, y = random_batch(model, n=1)
        _, single = loss_gradients(model, q, i, y)
        _, doubled = loss_gradients(model, np.repeat(q, 2, 0), np.repeat(i, 2, 0),
                                    np.repeat(y, 2, 0))
        for name in PARAM_NAMES:
            np.testing.assert_allclose(doubled[name], single[name], rtol=1e-12)

    def test_matches_central_finite_differences(self):
        """>= 100 sampled parameters across all three sub-networks, h = 1e-4."""
        model = tiny_model()
        rng = np.random.default_rng(3)
        q, i, y = random_batch(model, n=8, seed=4)
        _, grads = loss_gradients(model, q, i, y)
        checked = 0
        for name in PARAM_NAMES:
            flat = model.params[name].ravel()
            picks = rng.choice(flat.size, size=min(10, flat.size), replace=False)
            for j in picks:
                orig = flat[j]
                flat[j] = np.float32(orig + 1e-4)
                hi_w, hi_loss = float(flat[j]), batch_loss(model, q, i, y)
                flat[j] = np.float32(orig - 1e-4)
                lo_w, lo_loss = float(flat[j]), batch_loss(model, q, i, y)
                flat[j] = orig
                fd = (hi_loss - lo_loss) / (hi_w - lo_w)
                g = float(grads[name].ravel()[j])
                rel = abs(fd - g) / max(abs(fd), abs(g), 1e-6)
                assert rel <= 1e-3, f"{name}[{j}]: analytic {g} vs fd {fd}"
                checked += 1
        assert checked >= 100

    def test_empty_batch_rejected(self):
        model = tiny_model()
        with pytest.raises(ValueError, match="non-empty"):
            loss_gradients(model, np.zeros((0, 6)), np.zeros((0, 5)), np.zeros((0, 5)))


class TestBuildTrainingSet:
    def test_labels_match_oracle_recomputation(self, small_data, small_layout):
        ids = np.arange(small_data.shape[0])
        ts = build_training_set(small_data, ids, small_layout, k=10)
        knn, _ = brute_force_knn_batch(small_data, small_data, 10,
                                       exclude=np.arange(small_data.shape[0]))
        for row in range(0, small_data.shape[0], 211):
            counts = knn_count_distribution(small_layout, knn[row])
            np.testing.assert_array_equal(ts.labels[row], probing_label(counts))

    def test_inputs_are_centroid_distances(self, small_data, small_layout):
        ids = np.arange(200)
        ts = build_training_set(small_data, ids, small_layout, k=5)
        expect = centroid_distances_batch(small_data[:200], small_layout.centroids)
        np.testing.assert_allclose(ts.centroid_dists, expect.astype(np.float32))

    def test_isolated_blob_point_gets_one_hot_label(self):
        """All neighbors of a tight, distant blob stay in its own partition."""
        blob_a = gen_synthetic(100, 4, 1, 0.01, seed=1)
        blob_b = gen_synthetic(100, 4, 1, 0.01, seed=2) + 50.0
        data = np.vstack([blob_a, blob_b]).astype(np.float32)
        km = kmeans(data, 2, seed=0)
        layout = assign_hard(data, km.centroids)
        ts = build_training_set(data, np.arange(200), layout, k=10)
        assert (ts.labels.sum(axis=1) == 1).all()

    def test_k_too_large_for_subset(self, small_data, small_layout):
        with pytest.raises(ValueError, match="train_ids"):
            build_training_set(small_data, np.arange(10), small_layout, k=10)

    def test_requires_hard_layout(self, small_data, small_layout):
        from dataclasses import replace

        with pytest.raises(ValueError, match="hard layout"):
            build_training_set(small_data, np.arange(50),
                               replace(small_layout, kind="redundant"), k=5)


def separable_task(n_per=512, seed=0):
    """Two far-apart blobs, B = 2: every label is one-hot and learnable."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n_per, 8)).astype(np.float32)
    b = (rng.standard_normal((n_per, 8)) + 40.0).astype(np.float32)
    data = np.vstack([a, b]).astype(np.float32)
    km = kmeans(data, 2, seed=seed)
    layout = assign_hard(data, km.centroids)
    return data, layout, build_training_set(data, np.arange(2 * n_per), layout, k=10)


class TestTrain:
    def test_separable_task_converges(self):
        _, _, ts = separable_task()
        model = init_model(8, 2, seed=0)
        log = train(model, ts, TrainConfig(batch_size=64, epochs=10,
                                           learning_rate=0.05, seed=0))
        assert log[-1].loss < 0.01
        assert log[-1].recall >= 0.99

    def test_loss_decreases_over_first_epoch(self):
        _, _, ts = separable_task()
        model = init_model(8, 2, seed=1)
        initial = batch_loss(model, ts.queries, ts.centroid_dists, ts.labels)
        log = train(model, ts, TrainConfig(batch_size=64, epochs=1,
                                           learning_rate=0.05, seed=1))
        assert log[-1].loss < initial

    def test_deterministic_given_seed(self):
        _, _, ts = separable_task(n_per=128)
        weights = []
        for _ in range(2):
            model = init_model(8, 2, seed=3)
            train(model, ts, TrainConfig(batch_size=32, epochs=2, seed=3))
            weights.append(b"".join(model.params[n].tobytes() for n in PARAM_NAMES))
        assert weights[0] == weights[1]

    def test_divergence_aborts_with_diagnostic(self):
        _, _, ts = separable_task(n_per=64)
        model = init_model(8, 2, seed=0)
        with pytest.raises(RuntimeError, match="diverged"):
            train(model, ts, TrainConfig(batch_size=32, epochs=50,
                                         learning_rate=1e39, seed=0))

    def test_log_steps_every_ten_batches(self):
        _, _, ts = separable_task(n_per=512)  # 1024 examples, 16 batches/epoch
        model = init_model(8, 2, seed=0)
        log = train(model, ts, TrainConfig(batch_size=64, epochs=2, seed=0))
        assert [r.step for r in log] == [10, 20, 30, 32]


class TestPredictedNprobe:
    def test_half_threshold(self):
        assert predicted_nprobe([0.9, 0.6, 0.4], 0.5) == 2

    def test_threshold_above_max_gives_zero(self):
        assert predicted_nprobe([0.9, 0.6, 0.4], 0.95) == 0

    def test_monotone_in_sigma(self):
        rng = np.random.default_rng(9)
        probs = rng.random(32)
        counts = [predicted_nprobe(probs, s) for s in np.linspace(0.05, 0.95, 19)]
        assert all(b <= a for a, b in zip(counts, counts[1:]))

    def test_sigma_bounds(self):
        with pytest.raises(ValueError):
            predicted_nprobe([0.5], 0.0)


class TestModelPersistence:
    def test_round_trip_forward_bitwise_identical(self, tmp_path):
        model = tiny_model(seed=8)
        q, i, _ = random_batch(model, n=16, seed=8)
        before = model.forward_batch(q, i)
        save_model(model, tmp_path / "m.lirm")
        loaded = load_model(tmp_path / "m.lirm")
        after = loaded.forward_batch(q, i)
        assert before.tobytes() == after.tobytes()

    def test_truncated_file_rejected(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "m.lirm"
        save_model(model, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(ValueError, match="expected"):
            load_model(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.lirm"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_model(path)

    def test_version_mismatch_rejected(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "m.lirm"
        save_model(model, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="version"):
            load_model(path)

    def test_golden_bytes_stable(self):
        """Serialized bytes of a fixed-seed model are platform independent."""
        model = init_model(3, 2, width_q=(4, 3), width_i=(3, 3), width_p=4, seed=123)
        digest = hashlib.sha256(model_to_bytes(model)).hexdigest()
        assert digest == GOLDEN_MODEL_SHA256


GOLDEN_MODEL_SHA256 = "daa90212769781a85868141cf615d4a7c5f3502682bcf3a9510c54124095be3f"
