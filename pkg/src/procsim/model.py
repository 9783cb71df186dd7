"""Desk-scale embedder, proxy bank, optimizers and the confidence-aware trainer."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .confidence import (
    ConfidenceConfig,
    ThresholdState,
    ThresholdStrategy,
    compute_threshold,
    sample_confidence,
    superloss_pair_confidence,
)
from .data import FeatureDataset
from .losses import (
    LossConfig,
    SemanticMatrixSet,
    ms_loss_per_sample,
    objective_weights,
    procsim_objective,
    proxy_nca_per_sample,
    semantic_matrix_set,
    semantic_regularizer_per_sample,
)
from .numerics import DomainError, otsu_threshold

__all__ = [
    "Embedder",
    "ProxyBank",
    "Adam",
    "TrainConfig",
    "benchmark_config",
    "TrainHistory",
    "TrainResult",
    "TrainingDiverged",
    "sample_batch",
    "embed_batch",
    "batch_objective",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "procsim-checkpoint"
CHECKPOINT_VERSION = 1


def _normalize_rows(h: np.ndarray):
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-12)
    return h / norms, norms


class Embedder:
    """MLP ``d_in -> hidden... -> d_out`` with ReLU and a final L2 normalization."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise DomainError("need one bias per weight matrix")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise DomainError("consecutive layer shapes do not chain")

    @classmethod
    def initialize(cls, d_in: int, d_out: int = 512, hidden=(128,), rng=None) -> "Embedder":
        rng = np.random.default_rng(rng)
        dims = [d_in, *hidden, d_out]
        weights, biases = [], []
        for a, b in zip(dims[:-1], dims[1:]):
            weights.append(rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b)))
            biases.append(np.zeros(b))
        return cls(weights, biases)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DomainError(f"expected features of width {self.input_dim}, got shape {x.shape}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        z, norms = _normalize_rows(h)
        return z, (acts, z, norms)

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_z) -> list[np.ndarray]:
        """Gradients for ``params()`` given d(objective)/d(normalized output)."""
        acts, z, norms = cache
        g = (grad_z - z * np.sum(z * grad_z, axis=1, keepdims=True)) / norms
        gw, gb = [None] * len(self.weights), [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (acts[i + 1] > 0.0)
            gw[i] = acts[i].T @ g
            gb[i] = g.sum(axis=0)
            if i:
                g = g @ self.weights[i].T
        return [*gw, *gb]

    def to_dict(self) -> dict:
        return {
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d) -> "Embedder":
        return cls([np.array(w, dtype=np.float64) for w in d["weights"]], [np.array(b) for b in d["biases"]])


def embed_batch(embedder: Embedder, features) -> np.ndarray:
    """Unit-norm embeddings of a feature matrix."""
    return embedder.forward(features)[0]


@dataclass
class ProxyBank:
    """One unit-norm proxy per training class; ``class_ids[r]`` owns row ``r``."""

    class_ids: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.shape[0] != self.class_ids.size:
            raise DomainError("one proxy row per class id required")
        if np.unique(self.class_ids).size != self.class_ids.size:
            raise DomainError("duplicate class ids in proxy bank")
        self._row = {int(c): r for r, c in enumerate(self.class_ids)}

    @classmethod
    def initialize(cls, class_ids, dim: int, rng=None) -> "ProxyBank":
        rng = np.random.default_rng(rng)
        v = rng.normal(size=(len(class_ids), dim))
        return cls(class_ids, _normalize_rows(v)[0])

    def rows(self, labels) -> np.ndarray:
        try:
            return np.array([self._row[int(c)] for c in labels], dtype=np.int64)
        except KeyError as exc:
            raise DomainError(f"class {exc.args[0]} has no proxy") from None

    def renormalize(self) -> None:
        self.vectors = _normalize_rows(self.vectors)[0]


class Adam:
    """Adam with optional decoupled weight decay, updating arrays in place."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def sample_batch(labels, classes_per_batch: int, samples_per_class: int, rng) -> np.ndarray:
    """Class-balanced batch indices.

    Draws ``classes_per_batch`` classes uniformly without replacement, then
    ``samples_per_class`` indices per class (with replacement only when the
    class is too small).
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < classes_per_batch:
        raise DomainError(f"need {classes_per_batch} classes, dataset has {classes.size}")
    chosen = rng.choice(classes, size=classes_per_batch, replace=False)
    out = []
    for c in chosen:
        members = np.flatnonzero(labels == c)
        replace_ = members.size < samples_per_class
        out.append(rng.choice(members, size=samples_per_class, replace=replace_))
    return np.concatenate(out)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    proxy_learning_rate: float = 1e-3
    weight_decay: float = 4e-4
    epochs: int = 20
    classes_per_batch: int = 4
    samples_per_class: int = 8
    seed: int = 0
    embedding_dim: int = 512
    hidden_dim: int = 128
    method: str = "procsim"
    confidence: ConfidenceConfig = field(default_factory=ConfidenceConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.classes_per_batch * self.samples_per_class < 4:
            raise DomainError("a batch needs at least 4 samples for Otsu's threshold")
        if self.method not in ("procsim", "ms"):
            raise DomainError(f"method must be 'procsim' or 'ms', got {self.method!r}")
        if self.epochs < 1 or self.learning_rate <= 0 or self.proxy_learning_rate <= 0:
            raise DomainError("epochs and learning rates must be positive")
        if self.weight_decay < 0:
            raise DomainError("weight_decay must be nonnegative")

    @property
    def batch_size(self) -> int:
        return self.classes_per_batch * self.samples_per_class

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["confidence"] = self.confidence.to_dict()
        d["loss"] = self.loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict, strict: bool = True) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown and strict:
            raise DomainError(f"unknown train config keys: {sorted(unknown)}")
        conf = dict(d.pop("confidence", {}) or {})
        loss = dict(d.pop("loss", {}) or {})
        bad = (set(conf) - {"lam", "beta0", "strategy"}) | (set(loss) - {f.name for f in fields(LossConfig)})
        if bad and strict:
            raise DomainError(f"unknown nested config keys: {sorted(bad)}")
        d = {k: v for k, v in d.items() if k in known}
        return cls(confidence=ConfidenceConfig(**conf), loss=LossConfig(**loss), **d)


def benchmark_config(method: str = "procsim", strategy="otsu", seed: int = 0, **overrides) -> TrainConfig:
    """Settings used for the desk-scale synthetic benchmark.

    The plain defaults of :class:`TrainConfig` are sized for image backbones
    and barely move a small MLP in 20 epochs, so the benchmark raises the
    embedder learning rate and leans harder on the semantic regularizer.
    Proxies get a slower optimizer and a sharper softmax so their losses
    separate relabeled samples more cleanly.
    """
    cfg = dict(
        method=method,
        seed=seed,
        epochs=20,
        learning_rate=3e-3,
        proxy_learning_rate=3e-4,
        classes_per_batch=8,
        samples_per_class=4,
        confidence=ConfidenceConfig(strategy=strategy),
        loss=LossConfig(omega=20.0, temperature=0.3, proxy_scale=16.0),
    )
    cfg.update(overrides)
    return TrainConfig(**cfg)


class TrainingDiverged(RuntimeError):
    """A non-finite loss appeared; ``record`` holds the offending iteration."""

    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass
class TrainHistory:
    records: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, key) -> np.ndarray:
        return np.array([r[key] for r in self.records])

    def to_jsonl(self, path, include_timing: bool = False) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                if not include_timing:
                    rec = {k: v for k, v in rec.items() if k != "wall_time"}
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "TrainHistory":
        with open(path, encoding="utf-8") as fh:
            return cls([json.loads(line) for line in fh if line.strip()])


@dataclass
class TrainResult:
    embedder: Embedder
    proxies: ProxyBank
    history: TrainHistory
    config: TrainConfig


def _identification(losses, flags):
    res = otsu_threshold(losses)
    pred = np.asarray(losses) >= res.threshold
    tp = int(np.sum(pred & flags))
    fn = int(np.sum(~pred & flags))
    fp = int(np.sum(pred & ~flags))
    recall = tp / (tp + fn) if tp + fn else 1.0
    precision = tp / (tp + fp) if tp + fp else 1.0
    return recall, precision


def batch_objective(embedder, proxies, x, labels, cfg: TrainConfig, sem: SemanticMatrixSet | None, state):
    """Forward and backward pass for one batch.

    Returns a dict with the objective, per-sample losses, confidences, the
    threshold, the new threshold state and the gradients for the embedder
    parameters and the proxy matrix. Confidences and the threshold are
    constants here: no gradient flows through them.
    """
    lc = cfg.loss
    n = len(labels)
    e, cache = embedder.forward(x)
    rows = proxies.rows(labels)
    proxy_l, _, grad_p = proxy_nca_per_sample(
        e, rows, proxies.vectors, lc.proxy_scale, lc.include_target_in_denominator, weights=np.full(n, 1.0 / n)
    )
    if cfg.method == "procsim":
        tau, state = compute_threshold(proxy_l, state)
        if cfg.confidence.beta0 == 0.0:
            sigma = np.asarray(sample_confidence(proxy_l, tau, cfg.confidence.lam))
        else:
            sigma = np.asarray(superloss_pair_confidence(proxy_l, tau, cfg.confidence.lam, cfg.confidence.beta0))
        omega = lc.omega
    else:
        tau = float("nan")
        sigma = np.ones(n)
        omega = 0.0
    w_dml, w_ssl = objective_weights(sigma, omega)
    dml_l, grad_e = ms_loss_per_sample(e, labels, lc, weights=w_dml)
    if omega > 0.0:
        if sem is None:
            raise DomainError("omega > 0 requires semantic matrices")
        ssl_l, g_ssl = semantic_regularizer_per_sample(e, sem, lc.temperature, weights=w_ssl)
        grad_e = grad_e + g_ssl
    else:
        ssl_l = np.zeros(n)
    obj = procsim_objective(sigma, dml_l, ssl_l, omega)
    return {
        "objective": obj,
        "embeddings": e,
        "proxy_losses": proxy_l,
        "dml_losses": dml_l,
        "ssl_losses": ssl_l,
        "sigma": sigma,
        "tau": float(tau),
        "state": state,
        "grad_embedder": embedder.backward(cache, grad_e),
        "grad_proxies": grad_p,
    }


def _fl(x) -> float:
    return float(round(float(x), 12))


def train(
    dataset: FeatureDataset,
    cfg: TrainConfig,
    semantic_table=None,
    topk=None,
    corrupted=None,
    record_samples: bool = True,
) -> TrainResult:
    """Train an embedder on ``dataset.observed_labels``.

    Each iteration embeds a class-balanced batch, computes Proxy-NCA losses,
    a per-batch threshold and confidences, then minimizes the confidence
    weighted MS loss plus ``omega`` times the semantic regularizer. The
    embedder and the proxies use independent Adam instances; proxies only
    receive the Proxy-NCA gradient and are renormalized after each step.

    ``topk`` is an ``(n, k)`` array of class ids aligned with ``dataset``
    (required when the regularizer is active). ``corrupted`` is an optional
    boolean vector used only for monitoring noisy-sample identification.
    """
    lc = cfg.loss
    use_sem = cfg.method == "procsim" and lc.omega > 0.0
    if use_sem:
        if semantic_table is None or topk is None:
            raise DomainError("semantic_table and topk are required when omega > 0")
        topk = np.asarray(topk, dtype=np.int64)[:, : lc.top_k]
        if topk.shape[0] != len(dataset):
            raise DomainError("topk must have one row per sample")
    if corrupted is not None:
        corrupted = np.asarray(corrupted, dtype=bool)

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    rng_model, rng_proxy, rng_batch = (np.random.default_rng(s) for s in seeds)
    embedder = Embedder.initialize(
        dataset.feature_dim, cfg.embedding_dim, (cfg.hidden_dim,) if cfg.hidden_dim else (), rng_model
    )
    train_classes = np.unique(dataset.observed_labels)
    proxies = ProxyBank.initialize(train_classes, cfg.embedding_dim, rng_proxy)
    opt = Adam(embedder.params(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    popt = Adam([proxies.vectors], lr=cfg.proxy_learning_rate)

    state = ThresholdState(strategy=cfg.confidence.strategy)
    history = TrainHistory()
    iters_per_epoch = max(1, math.ceil(len(dataset) / cfg.batch_size))
    labels_all = dataset.observed_labels
    it = 0
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        for _ in range(iters_per_epoch):
            idx = sample_batch(labels_all, cfg.classes_per_batch, cfg.samples_per_class, rng_batch)
            y = labels_all[idx]
            sem = semantic_matrix_set(topk[idx], semantic_table) if use_sem else None
            out = batch_objective(embedder, proxies, dataset.features[idx], y, cfg, sem, state)
            state = out["state"]
            rec = {
                "iteration": it,
                "epoch": epoch,
                "objective": _fl(out["objective"]),
                "mean_dml": _fl(out["dml_losses"].mean()),
                "mean_proxy": _fl(out["proxy_losses"].mean()),
                "mean_ssl": _fl(out["ssl_losses"].mean()),
                "tau": None if math.isnan(out["tau"]) else _fl(out["tau"]),
                "sigma_mean": _fl(out["sigma"].mean()),
                "sigma_min": _fl(out["sigma"].min()),
                "sigma_max": _fl(out["sigma"].max()),
                "sigma_frac_full": _fl(np.mean(out["sigma"] >= 1.0)),
            }
            if corrupted is not None:
                flags = corrupted[idx]
                rec["noisy_in_batch"] = int(flags.sum())
                r, p = _identification(out["proxy_losses"], flags)
                rec["ident_recall_proxy"], rec["ident_precision_proxy"] = _fl(r), _fl(p)
                r, p = _identification(out["dml_losses"], flags)
                rec["ident_recall_dml"], rec["ident_precision_dml"] = _fl(r), _fl(p)
            if record_samples:
                rec["sigma"] = [_fl(s) for s in out["sigma"]]
                rec["proxy_losses"] = [_fl(s) for s in out["proxy_losses"]]
                rec["dml_losses"] = [_fl(s) for s in out["dml_losses"]]
                if corrupted is not None:
                    rec["corrupted"] = [bool(f) for f in corrupted[idx]]
            rec["wall_time"] = time.perf_counter() - start
            if not (math.isfinite(out["objective"]) and np.all(np.isfinite(out["proxy_losses"]))):
                history.records.append(rec)
                raise TrainingDiverged(f"non-finite loss at iteration {it}", rec)
            history.records.append(rec)

            opt.step(embedder.params(), out["grad_embedder"])
            popt.step([proxies.vectors], [out["grad_proxies"]])
            proxies.renormalize()
            it += 1
    log.debug("trained %d iterations in %.2fs", it, time.perf_counter() - start)
    return TrainResult(embedder, proxies, history, cfg)


def save_checkpoint(path, embedder: Embedder, proxies: ProxyBank, cfg: TrainConfig) -> None:
    """JSON container with layer shapes, weights, proxies and the training config."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_shapes": [list(w.shape) for w in embedder.weights],
        "embedder": embedder.to_dict(),
        "proxies": {"class_ids": proxies.class_ids.tolist(), "vectors": proxies.vectors.tolist()},
        "config": cfg.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, default=_json_default)


def _json_default(o):
    if isinstance(o, ThresholdStrategy):
        return o.value
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def load_checkpoint(path):
    """Returns ``(embedder, proxies, config)``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DomainError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DomainError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    embedder = Embedder.from_dict(doc["embedder"])
    shapes = [list(w.shape) for w in embedder.weights]
    if shapes != doc["layer_shapes"]:
        raise DomainError(f"{path}: layer shapes do not match weights")
    proxies = ProxyBank(doc["proxies"]["class_ids"], doc["proxies"]["vectors"])
    return embedder, proxies, TrainConfig.from_dict(doc["config"])
