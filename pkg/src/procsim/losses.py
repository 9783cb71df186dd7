"""Loss kernels with analytic gradients.

Every per-sample loss returns the vector of sample losses together with the
gradient of ``sum(weights * losses)``; ``weights`` defaults to ones. That is
exactly what the confidence-weighted objective needs: the trainer passes
``sigma / n`` for the metric loss and ``omega / n`` for the regularizer.

Embeddings are expected to be unit-norm rows, but the kernels do not enforce
it: the similarity matrix is simply the Gram matrix ``E @ E.T``, which keeps
finite-difference checks meaningful.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .numerics import DomainError

__all__ = [
    "LossConfig",
    "SemanticMatrixSet",
    "similarity_matrix",
    "ms_loss_per_sample",
    "proxy_nca_per_sample",
    "contrastive_pair_loss",
    "semantic_matrix_set",
    "semantic_regularizer_per_sample",
    "procsim_objective",
    "objective_weights",
]


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 2.0
    beta: float = 40.0
    delta: float = 0.1
    omega: float = 10.0
    proxy_scale: float = 1.0 / 0.11
    top_k: int = 3
    contrastive_margin: float = 0.5
    temperature: float = 1.0
    include_target_in_denominator: bool = True

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.proxy_scale > 0):
            raise DomainError("alpha, beta and proxy_scale must be positive")
        if self.omega < 0:
            raise DomainError("omega must be nonnegative")
        if int(self.top_k) != self.top_k or self.top_k < 1:
            raise DomainError("top_k must be a positive integer")
        if self.contrastive_margin < 0:
            raise DomainError("contrastive_margin must be nonnegative")
        if not self.temperature > 0:
            raise DomainError("temperature must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _weights(weights, n):
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise DomainError(f"weights must have shape ({n},), got {w.shape}")
    return w


def _masked_lse_with_zero(a: np.ndarray, mask: np.ndarray):
    """Row-wise ``log(1 + sum_{mask} exp(a))`` and its softmax weights."""
    a = np.where(mask, a, -np.inf)
    top = np.maximum(a.max(axis=1, keepdims=True), 0.0)
    ex = np.where(mask, np.exp(a - top), 0.0)
    total = np.exp(-top) + ex.sum(axis=1, keepdims=True)
    lse = top + np.log(total)
    return lse[:, 0], ex / total


def similarity_matrix(embeddings, tol: float = 1e-6) -> np.ndarray:
    """Cosine similarities of unit-norm rows.

    Raises :class:`DomainError` if any row is further than ``tol`` from unit norm.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2:
        raise DomainError("embeddings must be a 2-D array")
    norms = np.linalg.norm(e, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > tol)
    if bad.size:
        raise DomainError(f"rows {bad[:5].tolist()} are not unit-norm")
    s = e @ e.T
    s = 0.5 * (s + s.T)
    np.fill_diagonal(s, 1.0)
    return s


def ms_loss_per_sample(embeddings, labels, cfg: LossConfig = LossConfig(), weights=None):
    """Multi-Similarity loss for each anchor, without pair mining.

    Positives are all other samples sharing the anchor's label, negatives all
    samples with a different label. An empty set contributes ``log(1) = 0``.

    Returns ``(losses, grad)`` where ``grad`` is d(sum(weights * losses))/dE.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    n = e.shape[0]
    w = _weights(weights, n)
    s = e @ e.T
    same = y[:, None] == y[None, :]
    pos = same & ~np.eye(n, dtype=bool)
    neg = ~same

    lse_p, soft_p = _masked_lse_with_zero(-cfg.alpha * (s - cfg.delta), pos)
    lse_n, soft_n = _masked_lse_with_zero(cfg.beta * (s - cfg.delta), neg)
    losses = lse_p / cfg.alpha + lse_n / cfg.beta

    # d loss_i / d S_ij
    g_s = (soft_n - soft_p) * w[:, None]
    grad = (g_s + g_s.T) @ e
    return losses, grad


def proxy_nca_per_sample(
    embeddings,
    labels,
    proxies,
    scale: float = 1.0 / 0.11,
    include_target_in_denominator: bool = True,
    weights=None,
):
    """Proxy-NCA loss: negative log-probability of the correct proxy.

    ``labels`` index rows of ``proxies``. The softmax runs over
    ``scale * <e_i, p_c>`` for every proxy; with
    ``include_target_in_denominator=False`` the target is dropped from the
    denominator as in the original formulation.

    Returns ``(losses, grad_embeddings, grad_proxies)``.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    p = np.asarray(proxies, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, c = e.shape[0], p.shape[0]
    if y.shape != (n,):
        raise DomainError("one label per embedding required")
    if n and (y.min() < 0 or y.max() >= c):
        raise DomainError(f"labels must index one of {c} proxies")
    w = _weights(weights, n)
    z = scale * (e @ p.T)
    rows = np.arange(n)
    target = z[rows, y]
    if include_target_in_denominator:
        mask = np.ones_like(z, dtype=bool)
    else:
        mask = np.ones_like(z, dtype=bool)
        mask[rows, y] = False
    zm = np.where(mask, z, -np.inf)
    top = zm.max(axis=1, keepdims=True)
    ex = np.where(mask, np.exp(zm - top), 0.0)
    total = ex.sum(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(total[:, 0])
    losses = lse - target

    g_z = ex / total
    g_z[rows, y] -= 1.0
    g_z *= w[:, None] * scale
    return losses, g_z @ p, g_z.T @ e


def contrastive_pair_loss(sim, labels, margin: float = 0.5) -> np.ndarray:
    """Pairwise contrastive loss on cosine similarities.

    Positive pairs cost ``1 - S_ij``, negative pairs ``max(0, S_ij - margin)``;
    the diagonal is zero.
    """
    if margin < 0:
        raise DomainError("margin must be nonnegative")
    s = np.asarray(sim, dtype=np.float64)
    y = np.asarray(labels)
    same = y[:, None] == y[None, :]
    out = np.where(same, 1.0 - s, np.maximum(0.0, s - margin))
    np.fill_diagonal(out, 0.0)
    return out


@dataclass(frozen=True)
class SemanticMatrixSet:
    """``k`` language-similarity matrices aligned to one batch, shape ``(k, n, n)``."""

    matrices: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=np.float64)
        if m.ndim == 2:
            m = m[None]
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise DomainError("semantic matrices must have shape (k, n, n)")
        if not np.all(np.isfinite(m)):
            raise DomainError("semantic matrices must be finite")
        object.__setattr__(self, "matrices", m)

    @property
    def k(self) -> int:
        return self.matrices.shape[0]

    @property
    def n(self) -> int:
        return self.matrices.shape[1]

    def mean(self) -> np.ndarray:
        return self.matrices.mean(axis=0)


def semantic_matrix_set(topk, table) -> SemanticMatrixSet:
    """Language similarities from per-sample top-k class lists.

    Matrix ``r`` holds the cosine similarity between the class embeddings of
    the ``r``-th ranked class of samples ``i`` and ``j``.
    """
    topk = np.asarray(topk, dtype=np.int64)
    t = np.asarray(table, dtype=np.float64)
    if topk.ndim != 2:
        raise DomainError("topk must be an (n, k) array of class ids")
    if topk.min() < 0 or topk.max() >= len(t):
        raise DomainError("topk class id outside the semantic table")
    norms = np.linalg.norm(t, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("semantic table has a zero row")
    t = t / norms
    mats = np.stack([t[topk[:, r]] @ t[topk[:, r]].T for r in range(topk.shape[1])])
    return SemanticMatrixSet(mats)


def _masked_log_softmax(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    xm = np.where(mask, x, -np.inf)
    top = xm.max(axis=1, keepdims=True)
    lse = top + np.log(np.where(mask, np.exp(xm - top), 0.0).sum(axis=1, keepdims=True))
    return np.where(mask, x - lse, 0.0)


def semantic_regularizer_per_sample(embeddings, sem: SemanticMatrixSet, temperature: float = 1.0, weights=None):
    """Row-wise KL(language || visual) over off-diagonal similarity rows.

    Returns ``(losses, grad)`` with ``grad`` = d(sum(weights * losses))/dE.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    n = e.shape[0]
    if sem.n != n:
        raise DomainError(f"semantic matrices are {sem.n}x{sem.n}, batch has {n} samples")
    if not temperature > 0:
        raise DomainError("temperature must be positive")
    if n < 2:
        return np.zeros(n), np.zeros_like(e)
    w = _weights(weights, n)
    mask = ~np.eye(n, dtype=bool)
    log_q = _masked_log_softmax(sem.mean() / temperature, mask)
    log_p = _masked_log_softmax((e @ e.T) / temperature, mask)
    q = np.where(mask, np.exp(log_q), 0.0)
    p = np.where(mask, np.exp(log_p), 0.0)
    losses = (q * (log_q - log_p)).sum(axis=1)

    g_s = (p - q) * (w[:, None] / temperature)
    grad = (g_s + g_s.T) @ e
    return losses, grad


def objective_weights(sigma, omega: float):
    """Per-sample multipliers of the metric and regularizer terms in the batch mean."""
    sigma = np.asarray(sigma, dtype=np.float64)
    n = sigma.size
    return sigma / n, np.full(n, omega / n)


def procsim_objective(sigma, dml_losses, ssl_losses, omega: float) -> float:
    """Batch mean of ``sigma_i * dml_i + omega * ssl_i``.

    ``sigma`` is a constant weight: gradients flow through the two loss
    vectors only (see :func:`objective_weights`).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    dml = np.asarray(dml_losses, dtype=np.float64)
    ssl = np.asarray(ssl_losses, dtype=np.float64)
    if not (sigma.shape == dml.shape == ssl.shape) or sigma.ndim != 1:
        raise DomainError("sigma, dml and ssl losses must be vectors of equal length")
    if sigma.size == 0:
        raise DomainError("empty batch")
    return float(np.mean(sigma * dml + omega * ssl))
