"""Scalar special functions and 1-D statistics used by the confidence map.

Contains the principal branch of the Lambert W function, population variance
and the exact (sample-midpoint) Otsu threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "OtsuResult",
    "lambert_w0",
    "population_variance",
    "otsu_threshold",
    "otsu_cost",
]

INV_E = math.exp(-1.0)
_MAX_ITER = 50
_STEP_TOL = 1e-15


class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


def _initial_guess(x: np.ndarray) -> np.ndarray:
    w = np.empty_like(x)
    neg = x < 0.0
    small = (~neg) & (x <= 1.0)
    mid = (x > 1.0) & (x <= math.e)
    big = x > math.e

    # branch-point expansion in p = sqrt(2 (e x + 1))
    p = np.sqrt(np.maximum(2.0 * (math.e * x[neg] + 1.0), 0.0))
    w[neg] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p**3
    xs = x[small]
    w[small] = xs - xs * xs + 1.5 * xs**3
    # the cubic overshoots as x approaches 1; log1p is a better start there
    w[small] = np.where(xs > 0.3, np.log1p(xs) * 0.8, w[small])
    w[mid] = np.log1p(x[mid]) * 0.7
    lx = np.log(x[big])
    w[big] = lx - np.log(lx)
    return w


def lambert_w0(x):
    """Principal branch W0 of the Lambert W function.

    Solves ``w * exp(w) = x`` for real ``x >= -1/e`` with Halley's method.
    Accepts a scalar or an array; scalars come back as Python floats.

    Raises
    ------
    DomainError
        If any input is below ``-1/e`` or is not finite.
    """
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if not np.all(np.isfinite(arr)):
        raise DomainError("lambert_w0 requires finite input")
    # tolerate a few ulps below the branch point (e.g. -2/e * 0.5 computed in floats)
    if np.any(arr < -INV_E - 4e-16):
        raise DomainError(f"lambert_w0 undefined below -1/e, got min {arr.min()!r}")
    arr = np.maximum(arr, -INV_E)

    w = _initial_guess(arr)
    at_branch = arr <= -INV_E
    zero = arr == 0.0
    active = ~(at_branch | zero)
    for _ in range(_MAX_ITER):
        if not active.any():
            break
        wa = w[active]
        ew = np.exp(wa)
        f = wa * ew - arr[active]
        wp1 = wa + 1.0
        denom = ew * wp1 - (wa + 2.0) * f / (2.0 * wp1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(denom != 0.0, f / denom, 0.0)
        w_new = wa - step
        w[active] = w_new
        done = np.abs(step) <= _STEP_TOL * np.maximum(1.0, np.abs(w_new))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    w[at_branch] = -1.0
    w[zero] = 0.0
    if scalar:
        return float(w[0])
    return w


def population_variance(values) -> float:
    """Mean squared deviation from the mean (divides by ``n``)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise DomainError("variance of an empty sequence")
    if not np.all(np.isfinite(v)):
        raise DomainError("variance requires finite values")
    mu = v.mean()
    d = v - mu
    return float(np.dot(d, d) / v.size)


def _sum_sq_dev(v: np.ndarray) -> float:
    # |C| * Var[C]; an empty cluster contributes nothing
    if v.size == 0:
        return 0.0
    d = v - v.mean()
    return float(np.dot(d, d))


@dataclass(frozen=True)
class OtsuResult:
    """Outcome of :func:`otsu_threshold`.

    ``low_cluster`` and ``high_cluster`` are index arrays into the original
    (unsorted) input; ``cost`` is the weighted within-cluster variance of the
    chosen split.
    """

    threshold: float
    candidate_thresholds: np.ndarray
    low_cluster: np.ndarray
    high_cluster: np.ndarray
    cost: float
    costs: np.ndarray

    @property
    def index(self) -> int:
        """Position of the chosen threshold among the candidates."""
        return int(np.flatnonzero(self.candidate_thresholds == self.threshold)[0])


def otsu_cost(values, threshold: float) -> float:
    """Weighted within-cluster variance of splitting ``values`` at ``threshold``.

    Samples strictly below the threshold form the low cluster.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    low = v[v < threshold]
    high = v[v >= threshold]
    return (_sum_sq_dev(low) + _sum_sq_dev(high)) / v.size


def otsu_threshold(losses) -> OtsuResult:
    """Exact Otsu threshold over sample midpoints.

    Candidates are the midpoints ``(L[i] + L[i+1]) / 2`` of the sorted values
    for 1-indexed ``i`` in ``2 .. n-2``, so each side of every candidate split
    holds at least two samples (when values are distinct). The candidate with
    the lowest cost wins; ties go to the smallest threshold.
    """
    v = np.asarray(losses, dtype=np.float64).ravel()
    n = v.size
    if n < 4:
        raise DomainError(f"otsu_threshold needs at least 4 values, got {n}")
    if not np.all(np.isfinite(v)):
        raise DomainError("otsu_threshold requires finite values")

    s = np.sort(v, kind="stable")
    candidates = 0.5 * (s[1 : n - 2] + s[2 : n - 1])
    costs = np.empty(candidates.size)
    for j, t in enumerate(candidates):
        k = int(np.searchsorted(s, t, side="left"))
        costs[j] = (_sum_sq_dev(s[:k]) + _sum_sq_dev(s[k:])) / n
    best = int(np.argmin(costs))
    tau = float(candidates[best])
    low = np.flatnonzero(v < tau)
    high = np.flatnonzero(v >= tau)
    return OtsuResult(
        threshold=tau,
        candidate_thresholds=candidates,
        low_cluster=low,
        high_cluster=high,
        cost=float(costs[best]),
        costs=costs,
    )
