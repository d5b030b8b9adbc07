import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tinydrop.policy import ContractError, Exit, PolicyParams, Proceed, decide, drop_ratio, early_exit, kept_count

taus = st.floats(0.01, 0.99)
gammas = st.floats(0.05, 8.0)
rmaxes = st.floats(0.0, 0.95)


def test_exit_is_strict():
    assert isinstance(early_exit([0.9, 0.1], 0.9), Proceed)
    d = early_exit([0.05, 0.95], 0.9)
    assert d == Exit(1, 0.95)


def test_probabilities_checked():
    with pytest.raises(ContractError):
        early_exit([0.5, 0.6], 0.9)
    with pytest.raises(ContractError):
        early_exit([1.2, -0.2], 0.9)


@pytest.mark.parametrize("kw", [dict(tau=0.0), dict(tau=1.0), dict(tau=0.5, gamma=0.0), dict(tau=0.5, r_max=1.0),
                                dict(tau=0.5, r_max=-0.1)])
def test_params_validated(kw):
    with pytest.raises(ValueError):
        PolicyParams(**kw)


def test_anchor_and_endpoints():
    p = PolicyParams(0.9, 0.5, 0.7)
    assert drop_ratio(0.9, p) == pytest.approx(0.7, abs=1e-15)
    assert drop_ratio(0.0, p) == 0.0
    assert drop_ratio(0.225, p) == pytest.approx(0.35)


def test_kept_count_frozen():
    assert kept_count(0.7, 16) == 4
    assert kept_count(0.0, 16) == 16
    assert kept_count(0.99, 16) == 1
    assert kept_count(0.5, 197) == 98


@given(st.floats(0, 1), st.floats(0, 1), taus, gammas, rmaxes)
def test_drop_ratio_monotone_and_bounded(c1, c2, tau, gamma, r_max):
    p = PolicyParams(tau, gamma, r_max)
    lo, hi = sorted((c1, c2))
    assert 0.0 <= drop_ratio(lo, p) <= drop_ratio(hi, p) <= r_max


@given(st.floats(0.01, 0.99), taus, gammas, gammas, rmaxes)
def test_larger_gamma_drops_less(c, tau, g1, g2, r_max):
    lo, hi = sorted((g1, g2))
    assert drop_ratio(c, PolicyParams(tau, hi, r_max)) <= drop_ratio(c, PolicyParams(tau, lo, r_max)) + 1e-15


@given(st.floats(0, 0.999), st.integers(1, 1024))
def test_kept_count_in_range(r, T):
    k = kept_count(r, T)
    assert 1 <= k <= T
    assert k == max(1, math.floor((1 - r) * T))


@given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=10), taus, gammas, rmaxes, st.integers(1, 64))
def test_decide_consistent(raw, tau, gamma, r_max, T):
    probs = np.array(raw) / np.sum(raw)
    d = decide(probs, PolicyParams(tau, gamma, r_max), T)
    if probs.max() > tau:
        assert isinstance(d, Exit) and d.class_index == int(np.argmax(probs))
    else:
        assert isinstance(d, Proceed) and 1 <= d.kept_count <= T


def test_proceed_rejects_zero_keep():
    with pytest.raises(ContractError):
        Proceed(0.5, 0.5, 0)
