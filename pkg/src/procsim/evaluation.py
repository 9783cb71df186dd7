"""Retrieval and noise-identification metrics."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .numerics import DomainError, otsu_threshold

__all__ = [
    "RetrievalReport",
    "IdentificationReport",
    "NMIResult",
    "recall_at_k",
    "noisy_identification",
    "kmeans",
    "nmi",
    "export_histogram",
]


@dataclass(frozen=True)
class RetrievalReport:
    recall_at: dict[int, float]
    query_count: int
    gallery_count: int
    ks: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "query_count": self.query_count,
            "gallery_count": self.gallery_count,
            "ks": list(self.ks),
        }


def recall_at_k(queries, query_labels, gallery=None, gallery_labels=None, ks=(1, 2, 4, 8)) -> RetrievalReport:
    """Fraction of queries with a same-label item among their ``K`` most
    cosine-similar gallery items.

    With ``gallery=None`` the queries are their own gallery and each query's
    self-match is excluded. Ties in similarity go to the lower gallery index.
    """
    q = np.asarray(queries, dtype=np.float64)
    ql = np.asarray(query_labels)
    self_gallery = gallery is None
    g = q if self_gallery else np.asarray(gallery, dtype=np.float64)
    gl = ql if self_gallery else np.asarray(gallery_labels)
    ks = tuple(sorted(int(k) for k in ks))
    available = g.shape[0] - (1 if self_gallery else 0)
    if not ks or ks[0] < 1:
        raise DomainError("K values must be positive")
    if ks[-1] > available:
        raise DomainError(f"K={ks[-1]} exceeds the {available} retrievable gallery items")

    sim = q @ g.T
    if self_gallery:
        np.fill_diagonal(sim, -np.inf)
    kmax = ks[-1]
    # stable sort on -sim keeps the lower index first among equal similarities
    order = np.argsort(-sim, axis=1, kind="stable")[:, :kmax]
    hits = gl[order] == ql[:, None]
    first_hit = np.where(hits.any(axis=1), hits.argmax(axis=1), kmax)
    recall = {k: float(np.mean(first_hit < k)) for k in ks}
    return RetrievalReport(recall, q.shape[0], g.shape[0], ks)


@dataclass(frozen=True)
class IdentificationReport:
    """Noisy-sample detection quality; "positive" means corrupted."""

    recall: float
    precision: float
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def noisy_identification(proxy_losses, corrupted_flags) -> IdentificationReport:
    """Predict "noisy" where the loss reaches the Otsu threshold and score
    the prediction against the true corruption flags.

    With no corrupted samples recall is reported as 1 and ``degenerate`` is
    set; precision with no positive predictions is likewise 1.
    """
    losses = np.asarray(proxy_losses, dtype=np.float64)
    flags = np.asarray(corrupted_flags, dtype=bool)
    if losses.shape != flags.shape:
        raise DomainError("one corruption flag per loss required")
    tau = otsu_threshold(losses).threshold
    pred = losses >= tau
    tp = int(np.sum(pred & flags))
    fp = int(np.sum(pred & ~flags))
    fn = int(np.sum(~pred & flags))
    tn = int(np.sum(~pred & ~flags))
    degenerate = tp + fn == 0
    recall = 1.0 if degenerate else tp / (tp + fn)
    precision = 1.0 if tp + fp == 0 else tp / (tp + fp)
    return IdentificationReport(recall, precision, tau, tp, fp, tn, fn, degenerate)


def kmeans(x, k: int, seed: int = 0, iters: int = 50):
    """Lloyd's k-means with k-means++ seeding; returns ``(assignments, centers)``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise DomainError(f"cluster count {k} invalid for {n} points")
    rng = np.random.default_rng(seed)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        i = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[i])
        d2 = np.minimum(d2, ((x - x[i]) ** 2).sum(1))
    c = np.array(centers)
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        dist = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
        new = dist.argmin(axis=1)
        if np.array_equal(new, assign) and _ > 0:
            break
        assign = new
        for j in range(k):
            members = x[assign == j]
            if len(members):
                c[j] = members.mean(axis=0)
    return assign, c


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def _nmi_from_assignments(a, b) -> tuple[float, bool]:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    ha, hb = _entropy(table.sum(1)), _entropy(table.sum(0))
    if ha == 0.0 or hb == 0.0:
        return 0.0, True
    n = table.sum()
    nz = table > 0
    pij = table[nz] / n
    outer = np.outer(table.sum(1), table.sum(0))[nz] / (n * n)
    mi = float((pij * np.log(pij / outer)).sum())
    return min(1.0, max(0.0, mi / (0.5 * (ha + hb)))), False


@dataclass(frozen=True)
class NMIResult:
    value: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.value


def nmi(embeddings, labels, cluster_count: int | None = None, seed: int = 0) -> NMIResult:
    """k-means the embeddings, then normalized mutual information with the labels
    (arithmetic-mean normalization). Values from other NMI implementations are
    not directly comparable."""
    labels = np.asarray(labels)
    k = int(cluster_count) if cluster_count is not None else int(np.unique(labels).size)
    if k < 2:
        return NMIResult(0.0, True)
    assign, _ = kmeans(embeddings, k, seed=seed)
    value, degenerate = _nmi_from_assignments(assign, labels)
    return NMIResult(value, degenerate)


def export_histogram(values, bins: int, path, value_range=None) -> np.ndarray:
    """Write ``bin_lo,bin_hi,count`` rows; an empty input gives a header-only file.

    Returns the counts.
    """
    if bins < 1:
        raise DomainError("bins must be at least 1")
    v = np.asarray(values, dtype=np.float64).ravel()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        if v.size == 0:
            return np.zeros(0, dtype=np.int64)
        counts, edges = np.histogram(v, bins=bins, range=value_range)
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    return counts


def summarize(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"count": 0}
    return {
        "count": int(v.size),
        "mean": float(v.mean()),
        "min": float(v.min()),
        "max": float(v.max()),
        "std": float(v.std()) if v.size > 1 else 0.0,
    }

