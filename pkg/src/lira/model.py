"""The partition probing model: forward pass, loss, backprop, training, I/O.

The model maps (query vector, centroid-distance vector) to per-partition
probing probabilities through three sub-networks: a query encoder, a
distance encoder, and a head over their concatenated features. Weights
are stored float32; all arithmetic runs in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import check_dataset
from .oracle import brute_force_knn_batch
from .partitioner import PartitionLayout, centroid_distances_batch

PROB_EPS = 1e-7

# serialization order of the weight blobs
PARAM_NAMES = (
    "wq1", "bq1", "wq2", "bq2",
    "wi1", "bi1", "wi2", "bi2",
    "wp1", "bp1", "wp2", "bp2",
)

_MAGIC = b"LIRM"
_VERSION = 1


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class ProbingModel:
    """Weights and input-normalization statistics of the probing network."""

    dim: int
    n_partitions: int
    width_q: tuple[int, int]   # query encoder hidden/output widths
    width_i: tuple[int, int]   # distance encoder hidden/output widths
    width_p: int               # head hidden width
    sigma_train: float
    q_mean: np.ndarray
    q_std: np.ndarray
    i_mean: np.ndarray
    i_std: np.ndarray
    params: dict = field(repr=False)

    def _normalize(self, queries, centroid_dists) -> tuple[np.ndarray, np.ndarray]:
        q = np.asarray(queries, dtype=np.float64)
        i = np.asarray(centroid_dists, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != self.dim:
            raise ValueError(f"queries must be (n, {self.dim}), got {q.shape}")
        if i.shape != (q.shape[0], self.n_partitions):
            raise ValueError(
                f"centroid distances must be (n, {self.n_partitions}), got {i.shape}")
        if not (np.isfinite(q).all() and np.isfinite(i).all()):
            raise ValueError("non-finite model input")
        qn = (q - self.q_mean.astype(np.float64)) / self.q_std.astype(np.float64)
        inn = (i - self.i_mean.astype(np.float64)) / self.i_std.astype(np.float64)
        return qn, inn

    def _p64(self, name: str) -> np.ndarray:
        return self.params[name].astype(np.float64)

    def _forward_cached(self, queries, centroid_dists) -> dict:
        qn, inn = self._normalize(queries, centroid_dists)
        aq = qn @ self._p64("wq1") + self._p64("bq1")
        hq = np.maximum(aq, 0.0)
        xq = hq @ self._p64("wq2") + self._p64("bq2")
        ai = inn @ self._p64("wi1") + self._p64("bi1")
        hi = np.maximum(ai, 0.0)
        xi = hi @ self._p64("wi2") + self._p64("bi2")
        cat = np.concatenate([xq, xi], axis=1)
        ap = cat @ self._p64("wp1") + self._p64("bp1")
        hp = np.maximum(ap, 0.0)
        probs = _sigmoid(hp @ self._p64("wp2") + self._p64("bp2"))
        return {"qn": qn, "inn": inn, "aq": aq, "hq": hq, "ai": ai, "hi": hi,
                "cat": cat, "ap": ap, "hp": hp, "probs": probs}

    def forward_batch(self, queries, centroid_dists) -> np.ndarray:
        """Probing probabilities in (0, 1), one row per query, one column per partition."""
        return self._forward_cached(queries, centroid_dists)["probs"]

    def forward(self, query, centroid_dists) -> np.ndarray:
        """Probing probabilities for a single query."""
        q = np.asarray(query, dtype=np.float64).ravel()
        i = np.asarray(centroid_dists, dtype=np.float64).ravel()
        return self.forward_batch(q[None, :], i[None, :])[0]


def init_model(
    dim: int,
    n_partitions: int,
    width_q: tuple[int, int] = (128, 64),
    width_i: tuple[int, int] = (64, 64),
    width_p: int = 128,
    sigma_train: float = 0.5,
    seed: int = 0,
) -> ProbingModel:
    """Freshly initialized model; deterministic for a fixed seed."""
    if dim < 1 or n_partitions < 1:
        raise ValueError("dim and n_partitions must be >= 1")
    rng = np.random.default_rng(seed)

    def he(n_in, n_out):
        return (rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in)).astype(np.float32)

    def glorot(n_in, n_out):
        s = np.sqrt(2.0 / (n_in + n_out))
        return (rng.standard_normal((n_in, n_out)) * s).astype(np.float32)

    hq1, hq2 = width_q
    hi1, hi2 = width_i
    hp = width_p
    params = {
        "wq1": he(dim, hq1), "bq1": np.zeros(hq1, np.float32),
        "wq2": glorot(hq1, hq2), "bq2": np.zeros(hq2, np.float32),
        "wi1": he(n_partitions, hi1), "bi1": np.zeros(hi1, np.float32),
        "wi2": glorot(hi1, hi2), "bi2": np.zeros(hi2, np.float32),
        "wp1": he(hq2 + hi2, hp), "bp1": np.zeros(hp, np.float32),
        "wp2": glorot(hp, n_partitions), "bp2": np.zeros(n_partitions, np.float32),
    }
    return ProbingModel(
        dim=dim, n_partitions=n_partitions,
        width_q=(hq1, hq2), width_i=(hi1, hi2), width_p=hp,
        sigma_train=float(sigma_train),
        q_mean=np.zeros(dim, np.float32), q_std=np.ones(dim, np.float32),
        i_mean=np.zeros(n_partitions, np.float32), i_std=np.ones(n_partitions, np.float32),
        params=params,
    )


def bce_loss(label, probs) -> float:
    """Binary cross entropy summed over partitions, probabilities clamped to [eps, 1-eps]."""
    y = np.asarray(label, dtype=np.float64).ravel()
    p = np.asarray(probs, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise ValueError(f"label/probs length mismatch: {y.shape} vs {p.shape}")
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return float(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum())


def batch_loss(model: ProbingModel, queries, centroid_dists, labels) -> float:
    """Mean per-example loss over a batch."""
    probs = model.forward_batch(queries, centroid_dists)
    y = np.asarray(labels, dtype=np.float64)
    pc = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    return float(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum(axis=1).mean())


def loss_gradients(model: ProbingModel, queries, centroid_dists, labels) -> tuple[float, dict]:
    """Loss and exact gradients of the mean batch loss for every parameter."""
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] < 1:
        raise ValueError("batch must be a non-empty (n, B) label matrix")
    c = model._forward_cached(queries, centroid_dists)
    probs = c["probs"]
    n = y.shape[0]
    pc = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    loss = float(-(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum(axis=1).mean())

    # clamped outputs contribute zero gradient
    active = (probs > PROB_EPS) & (probs < 1.0 - PROB_EPS)
    delta = np.where(active, probs - y, 0.0) / n

    grads: dict = {}
    grads["wp2"] = c["hp"].T @ delta
    grads["bp2"] = delta.sum(axis=0)
    dhp = delta @ model._p64("wp2").T
    dhp[c["ap"] <= 0.0] = 0.0
    grads["wp1"] = c["cat"].T @ dhp
    grads["bp1"] = dhp.sum(axis=0)
    dcat = dhp @ model._p64("wp1").T
    hq2 = model.width_q[1]
    dxq, dxi = dcat[:, :hq2], dcat[:, hq2:]

    grads["wq2"] = c["hq"].T @ dxq
    grads["bq2"] = dxq.sum(axis=0)
    dhq = dxq @ model._p64("wq2").T
    dhq[c["aq"] <= 0.0] = 0.0
    grads["wq1"] = c["qn"].T @ dhq
    grads["bq1"] = dhq.sum(axis=0)

    grads["wi2"] = c["hi"].T @ dxi
    grads["bi2"] = dxi.sum(axis=0)
    dhi = dxi @ model._p64("wi2").T
    dhi[c["ai"] <= 0.0] = 0.0
    grads["wi1"] = c["inn"].T @ dhi
    grads["bi1"] = dhi.sum(axis=0)
    return loss, grads


def predicted_nprobe(probs, sigma: float) -> int:
    """Number of partitions whose probability clears the threshold."""
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"sigma must be in (0, 1), got {sigma}")
    return int((np.asarray(probs) >= sigma).sum())


def batched_probs(model: ProbingModel, queries, centroids, batch_size: int = 8192) -> np.ndarray:
    """Probing probabilities for many queries, computed in row batches."""
    q = np.asarray(queries, dtype=np.float32)
    out = np.empty((q.shape[0], model.n_partitions), dtype=np.float64)
    for start in range(0, q.shape[0], batch_size):
        stop = min(start + batch_size, q.shape[0])
        dists = centroid_distances_batch(q[start:stop], centroids)
        out[start:stop] = model.forward_batch(q[start:stop], dists)
    return out


@dataclass
class TrainingSet:
    queries: np.ndarray         # (n, d) float32
    centroid_dists: np.ndarray  # (n, B) float32
    labels: np.ndarray          # (n, B) uint8, every row has at least one positive


def build_training_set(dataset, train_ids, layout: PartitionLayout, k: int) -> TrainingSet:
    """Self-supervised training examples from a hard layout.

    Each training point acts as its own query: the input pairs the point
    with its centroid distances, and the label marks the partitions
    holding its k nearest neighbors *within the training subset* (the
    point itself excluded).
    """
    data = check_dataset(dataset)
    if layout.kind != "hard":
        raise ValueError(f"training labels need a hard layout, got {layout.kind!r}")
    ids = np.asarray(train_ids, dtype=np.int64).ravel()
    if ids.size < 2 or np.unique(ids).size != ids.size:
        raise ValueError("train_ids must be at least two distinct ids")
    if ids.min() < 0 or ids.max() >= data.shape[0]:
        raise ValueError("train_ids outside the dataset id range")
    if k >= ids.size:
        raise ValueError(f"k must be < |train_ids| = {ids.size}, got {k}")

    subset = data[ids]
    local_knn, _ = brute_force_knn_batch(subset, subset, k,
                                         exclude=np.arange(ids.size))
    global_knn = ids[local_knn]
    homes = layout.home[global_knn]
    labels = np.zeros((ids.size, layout.n_partitions), dtype=np.uint8)
    labels[np.arange(ids.size)[:, None], homes] = 1
    dists = centroid_distances_batch(subset, layout.centroids).astype(np.float32)
    return TrainingSet(queries=subset, centroid_dists=dists, labels=labels)


@dataclass
class TrainConfig:
    batch_size: int = 512
    epochs: int = 10
    learning_rate: float = 1e-3
    seed: int = 0
    sigma_train: float = 0.5
    log_every: int = 10    # batches between convergence-log records
    eval_size: int = 2048  # examples used for the logged metrics


@dataclass
class LogRecord:
    step: int
    loss: float
    recall: float
    mean_nprobe: float
    hit_rate: float


def _eval_metrics(model, queries, dists, labels, sigma) -> tuple[float, float, float, float]:
    probs = model.forward_batch(queries, dists)
    y = labels.astype(bool)
    pred = probs >= sigma
    pc = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    yf = y.astype(np.float64)
    loss = float(-(yf * np.log(pc) + (1.0 - yf) * np.log(1.0 - pc)).sum(axis=1).mean())
    true_sizes = y.sum(axis=1)
    covered = (pred & y).sum(axis=1)
    recall = float((covered / true_sizes).mean())
    mean_nprobe = float(pred.sum(axis=1).mean())
    hit_rate = float((~(y & ~pred).any(axis=1)).mean())  # all true partitions predicted
    return loss, recall, mean_nprobe, hit_rate


def train(model: ProbingModel, ts: TrainingSet, cfg: TrainConfig) -> list[LogRecord]:
    """Mini-batch Adam on the probing loss; returns the convergence log.

    Normalization statistics are taken from the training set and stored
    on the model. A log record is appended every `cfg.log_every` batches
    (loss, label recall, mean predicted probe count, and the fraction of
    examples whose true partitions are fully covered, all at
    `cfg.sigma_train`), plus a final record at the last step.
    """
    n = ts.queries.shape[0]
    if n < 1:
        raise ValueError("empty training set")
    if (ts.labels.sum(axis=1) < 1).any():
        raise ValueError("every training label needs at least one positive partition")
    model.sigma_train = float(cfg.sigma_train)
    model.q_mean = ts.queries.mean(axis=0, dtype=np.float64).astype(np.float32)
    model.q_std = _safe_std(ts.queries)
    model.i_mean = ts.centroid_dists.mean(axis=0, dtype=np.float64).astype(np.float32)
    model.i_std = _safe_std(ts.centroid_dists)

    rng = np.random.default_rng(cfg.seed)
    eval_idx = (np.arange(n) if n <= cfg.eval_size
                else rng.choice(n, size=cfg.eval_size, replace=False))
    eval_q = ts.queries[eval_idx]
    eval_i = ts.centroid_dists[eval_idx]
    eval_y = ts.labels[eval_idx]

    adam_m = {k: np.zeros(v.shape, np.float64) for k, v in model.params.items()}
    adam_v = {k: np.zeros(v.shape, np.float64) for k, v in model.params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0
    log: list[LogRecord] = []
    step = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = perm[start:start + cfg.batch_size]
            # divergence is detected via the loss check; don't warn on the way there
            with np.errstate(invalid="ignore", over="ignore"):
                loss, grads = loss_gradients(
                    model, ts.queries[batch], ts.centroid_dists[batch], ts.labels[batch])
                if not np.isfinite(loss):
                    raise RuntimeError(
                        f"training diverged: loss={loss} at step {step} "
                        f"(lr={cfg.learning_rate}, batch_size={cfg.batch_size})")
                t += 1
                for name in PARAM_NAMES:
                    g = grads[name]
                    adam_m[name] = beta1 * adam_m[name] + (1.0 - beta1) * g
                    adam_v[name] = beta2 * adam_v[name] + (1.0 - beta2) * g * g
                    mhat = adam_m[name] / (1.0 - beta1 ** t)
                    vhat = adam_v[name] / (1.0 - beta2 ** t)
                    w = model.params[name].astype(np.float64)
                    w -= cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
                    model.params[name] = w.astype(np.float32)
            step += 1
            if step % cfg.log_every == 0:
                log.append(LogRecord(
                    step, *_eval_metrics(model, eval_q, eval_i, eval_y, cfg.sigma_train)))
    if not log or log[-1].step != step:
        log.append(LogRecord(
            step, *_eval_metrics(model, eval_q, eval_i, eval_y, cfg.sigma_train)))
    return log


def _safe_std(arr) -> np.ndarray:
    std = arr.std(axis=0, dtype=np.float64).astype(np.float32)
    std[std < 1e-7] = 1.0
    return std


def model_to_bytes(model: ProbingModel) -> bytes:
    """Serialize: magic, version, meta, then float32 LE weight blobs in order."""
    hq1, hq2 = model.width_q
    hi1, hi2 = model.width_i
    parts = [_MAGIC, struct.pack(
        "<IIIIIIIIf", _VERSION, model.dim, model.n_partitions,
        hq1, hq2, hi1, hi2, model.width_p, model.sigma_train)]
    blobs = [model.q_mean, model.q_std, model.i_mean, model.i_std]
    blobs += [model.params[name] for name in PARAM_NAMES]
    parts += [np.ascontiguousarray(b, dtype="<f4").tobytes() for b in blobs]
    return b"".join(parts)


def model_from_bytes(raw: bytes, label: str = "model blob") -> ProbingModel:
    """Deserialize a model; fails on bad magic, version, or truncation."""
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise ValueError(f"{label}: not a probing-model blob (bad magic)")
    head_len = 4 + struct.calcsize("<IIIIIIIIf")
    if len(raw) < head_len:
        raise ValueError(f"{label}: truncated model header")
    version, dim, b, hq1, hq2, hi1, hi2, hp, sigma = struct.unpack(
        "<IIIIIIIIf", raw[4:head_len])
    if version != _VERSION:
        raise ValueError(f"{label}: unsupported model version {version}")
    shapes = [(dim,), (dim,), (b,), (b,),
              (dim, hq1), (hq1,), (hq1, hq2), (hq2,),
              (b, hi1), (hi1,), (hi1, hi2), (hi2,),
              (hq2 + hi2, hp), (hp,), (hp, b), (b,)]
    expected = head_len + sum(int(np.prod(s)) for s in shapes) * 4
    if len(raw) != expected:
        raise ValueError(f"{label}: expected {expected} bytes, found {len(raw)}")
    offset = head_len
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        arrays.append(arr.reshape(shape).astype(np.float32))
        offset += count * 4
    q_mean, q_std, i_mean, i_std = arrays[:4]
    params = dict(zip(PARAM_NAMES, arrays[4:]))
    return ProbingModel(
        dim=dim, n_partitions=b, width_q=(hq1, hq2), width_i=(hi1, hi2),
        width_p=hp, sigma_train=float(sigma),
        q_mean=q_mean, q_std=q_std, i_mean=i_mean, i_std=i_std, params=params)


def save_model(model: ProbingModel, path) -> None:
    """Write the model file; `load_model` restores bitwise-identical outputs."""
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> ProbingModel:
    path = Path(path)
    return model_from_bytes(path.read_bytes(), label=str(path))
