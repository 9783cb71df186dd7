"""Per-sample confidence from proxy losses.

A batch of proxy losses is split by a threshold (Otsu by default) and each
sample receives ``exp(-W([(loss - tau) / (2 lambda)]_+))``: samples below the
threshold keep full weight, the rest decay towards zero as their loss grows.
The pair-level SuperLoss formula is kept as a baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .numerics import DomainError, lambert_w0, otsu_threshold

__all__ = [
    "ThresholdStrategy",
    "ConfidenceConfig",
    "ThresholdState",
    "GaussianComponent",
    "compute_threshold",
    "sample_confidence",
    "superloss_pair_confidence",
    "batch_confidences",
    "fit_gmm_1d",
    "gmm_threshold",
    "SUPERLOSS_BETA0",
]

SUPERLOSS_BETA0 = -2.0 / math.e


class ThresholdStrategy(str, Enum):
    OTSU = "otsu"
    GLOBAL_AVERAGE = "global_average"
    GMM = "gmm"


@dataclass(frozen=True)
class ConfidenceConfig:
    lam: float = 1.0
    beta0: float = 0.0
    strategy: ThresholdStrategy = ThresholdStrategy.OTSU

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise DomainError(f"lambda must be positive and finite, got {self.lam!r}")
        if self.beta0 != 0.0 and self.beta0 != SUPERLOSS_BETA0:
            raise DomainError(f"beta0 must be 0 or -2/e, got {self.beta0!r}")
        object.__setattr__(self, "strategy", ThresholdStrategy(self.strategy))

    def to_dict(self) -> dict:
        return {"lam": self.lam, "beta0": self.beta0, "strategy": self.strategy.value}


@dataclass(frozen=True)
class GaussianComponent:
    mean: float
    var: float
    weight: float


@dataclass(frozen=True)
class ThresholdState:
    """Threshold bookkeeping carried across training iterations.

    ``running_sum``/``running_count`` back the global-average strategy;
    ``gmm_params`` holds the last mixture fit and ``fallback`` records
    whether the last gmm threshold fell back to Otsu.
    """

    strategy: ThresholdStrategy = ThresholdStrategy.OTSU
    running_sum: float = 0.0
    running_count: int = 0
    gmm_params: tuple[GaussianComponent, GaussianComponent] | None = None
    fallback: bool = False
    fallback_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", ThresholdStrategy(self.strategy))
        if self.running_count < 0:
            raise DomainError("running_count must be nonnegative")
        if self.running_count == 0 and self.running_sum != 0.0:
            raise DomainError("running_sum must be 0 when running_count is 0")


def _finite_losses(losses) -> np.ndarray:
    v = np.asarray(losses, dtype=np.float64).ravel()
    if v.size == 0:
        raise DomainError("empty loss vector")
    if not np.all(np.isfinite(v)):
        raise DomainError("losses must be finite")
    return v


def _log_normal(x, mean, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)


def fit_gmm_1d(values, max_iter: int = 100, tol: float = 1e-8):
    """Two-component 1-D Gaussian mixture fitted by EM.

    Means start at the 25th/75th percentiles, variances at the sample
    variance and weights at 1/2. Returns ``(components, converged)`` with
    the components sorted by mean.
    """
    x = _finite_losses(values)
    total_var = float(x.var())
    floor = max(total_var * 1e-6, 1e-12)
    if total_var <= 0.0:
        comp = GaussianComponent(float(x[0]), floor, 0.5)
        return (comp, comp), False

    mu = np.array([np.percentile(x, 25), np.percentile(x, 75)], dtype=np.float64)
    var = np.array([total_var, total_var])
    pi = np.array([0.5, 0.5])
    prev = -np.inf
    converged = False
    for _ in range(max_iter):
        logp = np.stack([np.log(pi[k]) + _log_normal(x, mu[k], var[k]) for k in range(2)])
        top = logp.max(axis=0)
        lse = top + np.log(np.exp(logp - top).sum(axis=0))
        ll = float(lse.sum())
        resp = np.exp(logp - lse)
        nk = resp.sum(axis=1)
        if np.any(nk <= 1e-12):
            break
        pi = nk / x.size
        mu = (resp @ x) / nk
        var = np.maximum(np.array([resp[k] @ (x - mu[k]) ** 2 for k in range(2)]) / nk, floor)
        if abs(ll - prev) <= tol:
            converged = True
            break
        prev = ll
    order = np.argsort(mu, kind="stable")
    comps = tuple(GaussianComponent(float(mu[k]), float(var[k]), float(pi[k])) for k in order)
    return comps, converged


def gmm_threshold(components) -> float | None:
    """Point between the two means where both posteriors are equal.

    Returns ``None`` when the responsibilities never cross between the means.
    """
    lo, hi = components
    if not hi.mean > lo.mean:
        return None

    def gap(t):
        return (math.log(lo.weight) + _log_normal(t, lo.mean, lo.var)) - (
            math.log(hi.weight) + _log_normal(t, hi.mean, hi.var)
        )

    a, b = lo.mean, hi.mean
    ga, gb = gap(a), gap(b)
    if not (ga > 0.0 and gb < 0.0):
        return None
    for _ in range(200):
        m = 0.5 * (a + b)
        gm = gap(m)
        if gm > 0.0:
            a = m
        else:
            b = m
        if b - a <= 1e-12 * max(1.0, abs(m)):
            break
    return 0.5 * (a + b)


def compute_threshold(losses, state: ThresholdState) -> tuple[float, ThresholdState]:
    """Threshold for one batch of proxy losses under ``state.strategy``.

    Returns the threshold and the updated state; ``state`` itself is not
    modified.
    """
    v = _finite_losses(losses)
    strategy = state.strategy
    if strategy is ThresholdStrategy.OTSU:
        return otsu_threshold(v).threshold, state

    if strategy is ThresholdStrategy.GLOBAL_AVERAGE:
        total = state.running_sum + float(v.sum())
        count = state.running_count + v.size
        return total / count, replace(state, running_sum=total, running_count=count)

    if v.size < 4:
        raise DomainError(f"gmm threshold needs at least 4 values, got {v.size}")
    comps, converged = fit_gmm_1d(v)
    tau = gmm_threshold(comps) if converged else None
    if tau is None:
        return otsu_threshold(v).threshold, replace(
            state, gmm_params=comps, fallback=True, fallback_count=state.fallback_count + 1
        )
    return tau, replace(state, gmm_params=comps, fallback=False)


def sample_confidence(loss, tau, lam: float):
    """``exp(-W([(loss - tau) / (2 lam)]_+))``; equals 1 whenever loss <= tau."""
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam!r}")
    loss = np.asarray(loss, dtype=np.float64)
    if not (np.all(np.isfinite(loss)) and math.isfinite(tau)):
        raise DomainError("loss and tau must be finite")
    with np.errstate(over="ignore"):
        arg = np.maximum((loss - tau) / (2.0 * lam), 0.0)
    # w * exp(w) overflows past ~1e300; sigma is already ~exp(-570) at the clamp
    arg = np.minimum(arg, 1e250)
    sigma = np.exp(-lambert_w0(arg))
    return float(sigma) if np.ndim(sigma) == 0 else sigma


def superloss_pair_confidence(loss, tau, lam: float, beta0: float = SUPERLOSS_BETA0):
    """SuperLoss closed-form confidence ``exp(-W(max(beta0, (loss-tau)/lam) / 2))``.

    With ``beta0 = -2/e`` the result may exceed 1 (up to ``e``); with
    ``beta0 = 0`` it coincides with :func:`sample_confidence`.
    """
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam!r}")
    if beta0 != 0.0 and beta0 != SUPERLOSS_BETA0:
        raise DomainError(f"beta0 must be 0 or -2/e, got {beta0!r}")
    loss = np.asarray(loss, dtype=np.float64)
    if not (np.all(np.isfinite(loss)) and math.isfinite(tau)):
        raise DomainError("loss and tau must be finite")
    arg = 0.5 * np.maximum(beta0, (loss - tau) / lam)
    sigma = np.exp(-lambert_w0(arg))
    return float(sigma) if np.ndim(sigma) == 0 else sigma


def batch_confidences(proxy_losses, config: ConfidenceConfig, state: ThresholdState | None = None):
    """Confidence for every sample of a batch, in input order.

    Returns ``(sigma, tau, new_state)``.
    """
    if state is None:
        state = ThresholdState(strategy=config.strategy)
    elif state.strategy is not config.strategy:
        raise DomainError(
            f"state strategy {state.strategy.value} does not match config {config.strategy.value}"
        )
    v = _finite_losses(proxy_losses)
    tau, state = compute_threshold(v, state)
    if config.beta0 == 0.0:
        sigma = np.atleast_1d(sample_confidence(v, tau, config.lam))
    else:
        sigma = np.atleast_1d(superloss_pair_confidence(v, tau, config.lam, config.beta0))
    return np.asarray(sigma, dtype=np.float64), float(tau), state
