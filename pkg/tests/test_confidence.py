import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from procsim.confidence import (
    SUPERLOSS_BETA0,
    ConfidenceConfig,
    ThresholdState,
    ThresholdStrategy,
    batch_confidences,
    compute_threshold,
    fit_gmm_1d,
    sample_confidence,
    superloss_pair_confidence,
)
from procsim.numerics import DomainError, lambert_w0

OMEGA = 0.5671432904097838


def test_sample_confidence_examples():
    assert sample_confidence(0.5, 1.0, 0.3) == 1.0
    lam = 0.7
    assert sample_confidence(1.0 + 2 * lam, 1.0, lam) == pytest.approx(OMEGA, abs=1e-10)
    assert sample_confidence(1.0 + 2 * math.e * lam, 1.0, lam) == pytest.approx(1 / math.e, abs=1e-10)


def test_sample_confidence_errors():
    with pytest.raises(DomainError):
        sample_confidence(1.0, 0.0, 0.0)
    with pytest.raises(DomainError):
        sample_confidence(float("nan"), 0.0, 1.0)


def test_sample_confidence_huge_gap_is_tiny_not_nan():
    s = sample_confidence(1e300, 0.0, 1e-9)
    assert 0.0 <= s < 1e-200


def test_superloss_examples():
    for beta0 in (0.0, SUPERLOSS_BETA0):
        assert superloss_pair_confidence(2.0, 2.0, 1.0, beta0) == 1.0
    assert superloss_pair_confidence(0.0, 5.0, 1.0, SUPERLOSS_BETA0) == pytest.approx(math.e, rel=1e-6)
    assert superloss_pair_confidence(3.0, 1.0, 1.0, 0.0) == pytest.approx(OMEGA, abs=1e-10)
    with pytest.raises(DomainError):
        superloss_pair_confidence(1.0, 0.0, 1.0, beta0=-0.5)


def test_superloss_beta0_zero_matches_sample_confidence():
    rng = np.random.default_rng(5)
    loss, tau, lam = rng.uniform(0, 10, 300), 4.0, 0.37
    np.testing.assert_allclose(
        superloss_pair_confidence(loss, tau, lam, 0.0), sample_confidence(loss, tau, lam), rtol=1e-15, atol=0
    )


def test_global_average_examples():
    state = ThresholdState(ThresholdStrategy.GLOBAL_AVERAGE)
    tau, state = compute_threshold([1, 2, 3], state)
    assert tau == 2.0 and (state.running_sum, state.running_count) == (6.0, 3)
    tau, state = compute_threshold([5, 5], state)
    assert tau == pytest.approx(3.2) and (state.running_sum, state.running_count) == (16.0, 5)


def test_threshold_state_invariants():
    with pytest.raises(DomainError):
        ThresholdState(running_sum=1.0, running_count=0)
    with pytest.raises(DomainError):
        ThresholdState(running_count=-1)


def test_otsu_strategy_is_stateless():
    state = ThresholdState()
    tau, new = compute_threshold([1, 2, 10, 11], state)
    assert tau == 6.0 and new == state


def test_otsu_and_gmm_need_four_values():
    with pytest.raises(DomainError):
        compute_threshold([1, 2, 3], ThresholdState(ThresholdStrategy.OTSU))
    with pytest.raises(DomainError):
        compute_threshold([1, 2, 3], ThresholdState(ThresholdStrategy.GMM))


def test_gmm_threshold_on_separated_mixture():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(0, 0.1, 500), rng.normal(10, 0.1, 500)])
    tau, state = compute_threshold(x, ThresholdState(ThresholdStrategy.GMM))
    assert 1.0 < tau < 9.0
    assert not state.fallback
    lo, hi = state.gmm_params
    assert lo.mean == pytest.approx(0.0, abs=0.05) and hi.mean == pytest.approx(10.0, abs=0.05)
    assert lo.weight + hi.weight == pytest.approx(1.0)
    assert lo.var > 0 and hi.var > 0


def test_gmm_falls_back_to_otsu_and_flags_it():
    x = np.array([2.0, 2.0, 2.0, 2.0, 2.0])
    tau, state = compute_threshold(x, ThresholdState(ThresholdStrategy.GMM))
    assert state.fallback and state.fallback_count == 1
    assert tau == 2.0


def test_fit_gmm_reports_convergence():
    rng = np.random.default_rng(1)
    comps, converged = fit_gmm_1d(np.concatenate([rng.normal(0, 1, 200), rng.normal(6, 1, 200)]))
    assert converged
    assert comps[0].mean < comps[1].mean


def test_batch_confidences_example():
    sigma, tau, _ = batch_confidences([1, 2, 10, 11], ConfidenceConfig(lam=1.0))
    assert tau == 6.0
    expected = [1.0, 1.0, math.exp(-lambert_w0(2.0)), math.exp(-lambert_w0(2.5))]
    np.testing.assert_allclose(sigma, expected, rtol=1e-14)


def test_batch_confidences_strategy_mismatch():
    with pytest.raises(DomainError):
        batch_confidences([1, 2, 3, 4], ConfidenceConfig(), ThresholdState(ThresholdStrategy.GMM))


def test_config_validation():
    with pytest.raises(DomainError):
        ConfidenceConfig(lam=0.0)
    with pytest.raises(DomainError):
        ConfidenceConfig(beta0=-0.5)
    assert ConfidenceConfig(strategy="gmm").strategy is ThresholdStrategy.GMM
    assert ConfidenceConfig().to_dict() == {"lam": 1.0, "beta0": 0.0, "strategy": "otsu"}


losses = st.lists(st.floats(0, 50, allow_nan=False), min_size=4, max_size=64)


@settings(max_examples=150, deadline=None)
@given(losses, st.floats(-1e3, 1e3), st.floats(0.01, 10))
def test_translation_invariance(values, c, lam):
    v = np.array(values)
    cfg = ConfidenceConfig(lam=lam)
    s0, t0, _ = batch_confidences(v, cfg)
    s1, t1, _ = batch_confidences(v + c, cfg)
    np.testing.assert_allclose(s1, s0, atol=1e-9, rtol=0)


@settings(max_examples=150, deadline=None)
@given(losses, st.floats(0.01, 10))
def test_order_antimonotone_and_bounded(values, lam):
    v = np.array(values)
    s, _, _ = batch_confidences(v, ConfidenceConfig(lam=lam))
    assert np.all((s >= 0) & (s <= 1))
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(s[order]) <= 0)
    for i in range(len(v)):
        for j in range(len(v)):
            if v[i] == v[j]:
                assert s[i] == s[j]
