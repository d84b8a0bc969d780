from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from cvquad.errors import ParameterError
from cvquad.rate_theory import (
    Recommended,
    Regime,
    integral_exponent,
    moment_exponent,
    optimal_k,
    peak_truncated_exponent,
    regime,
    theory_table,
    thresholds,
    truncated_mc_exponent,
)


def test_moment_exponent_examples():
    assert moment_exponent(2, 4, 3, 1) == pytest.approx(-2.5, abs=1e-15)
    assert moment_exponent(0.05, 4, 3, 1) == pytest.approx(-0.4, abs=1e-15)
    assert moment_exponent(0.125, 4, 3, 1) == pytest.approx(-0.625, abs=1e-15)


@pytest.mark.parametrize("p,q,d", [(4, 3, 1), (3, 2, 1), (5, 4, 2), (2.5, 2, 3)])
def test_branches_cross_at_rate_transition(p, q, d):
    s = thresholds(p, q, d)[1]
    first = -q * (s / d - 1 / p) - 1
    second = -s / d - 0.5
    assert first == pytest.approx(second, abs=1e-12)
    assert moment_exponent(s, p, q, d) == pytest.approx(second, abs=1e-12)


@pytest.mark.parametrize("args,name", [
    ((0.1, 2, 1.5, 1), "p > 2"),
    ((0.1, 3, 3, 1), "q < p"),
    ((0.1, 5, 2, 1), "p < 2q"),
    ((-0.1, 3, 2, 1), "s >= 0"),
    ((0.1, 3, 2, 0), "d a positive integer"),
])
def test_moment_exponent_names_violation(args, name):
    with pytest.raises(ParameterError, match=name.replace("(", r"\(")):
        moment_exponent(*args)


def test_integral_exponent_examples():
    assert integral_exponent(1, 1, 0) == -0.5
    assert integral_exponent(1, 1, math.inf) == -1.5
    assert integral_exponent(0.8, 2, 0.4) == pytest.approx(-0.9, abs=1e-15)


def test_integral_exponent_rejects():
    with pytest.raises(ParameterError):
        integral_exponent(0, 1, 0)
    with pytest.raises(ParameterError):
        integral_exponent(1, 1, -0.1)


@settings(max_examples=200)
@given(st.floats(1e-6, 10), st.integers(1, 5))
def test_integral_exponent_noise_dominated_at_zero_gamma(s, d):
    assert integral_exponent(s, d, 0) == -0.5


@settings(max_examples=200)
@given(st.floats(1e-3, 5), st.floats(1e-3, 5), st.floats(0, 3), st.floats(0, 3), st.integers(1, 4))
def test_integral_exponent_monotone(s, ds, g, dg, d):
    base = integral_exponent(s, d, g)
    assert integral_exponent(s + ds, d, g) <= base
    assert integral_exponent(s, d, g + dg) <= base


admissible = st.tuples(st.floats(2.01, 20), st.floats(0.51, 0.99), st.integers(1, 6)).map(
    lambda t: (t[0], t[0] * t[1], t[2]))  # q = p * frac, so p/2 < q < p


@settings(max_examples=300)
@given(admissible)
def test_threshold_ordering(pqd):
    p, q, d = pqd
    assume(q < p < 2 * q)
    t1, t2, t3 = thresholds(p, q, d)
    assert t1 > t2 > t3 > 0


@settings(max_examples=200)
@given(admissible, st.floats(0, 5), st.floats(0, 5))
def test_moment_exponent_monotone_in_s(pqd, s, ds):
    p, q, d = pqd
    assume(q < p < 2 * q)
    assert moment_exponent(s + ds, p, q, d) <= moment_exponent(s, p, q, d) + 1e-12


@settings(max_examples=200)
@given(admissible, st.floats(0, 5))
def test_moment_exponent_continuous(pqd, s):
    p, q, d = pqd
    assume(q < p < 2 * q)
    h = 1e-9
    assert abs(moment_exponent(s + h, p, q, d) - moment_exponent(s, p, q, d)) <= q * h / d + 1e-12


def test_regime_examples():
    rep = regime(2, 4, 3, 1)
    assert rep.regime is Regime.CASE_I and rep.recommended_method is Recommended.CV
    assert rep.exponent == -2.5
    rep = regime(0.15, 4, 3, 1)
    assert rep.regime is Regime.CASE_II and rep.recommended_method is Recommended.CV
    assert rep.thresholds == pytest.approx((0.25, 0.125, 1 / 12))
    rep = regime(0.1, 4, 3, 1)
    assert rep.regime is Regime.CASE_III and rep.recommended_method is Recommended.CV
    rep = regime(0.05, 4, 3, 1)
    assert rep.regime is Regime.RARE_EVENT and rep.recommended_method is Recommended.TRUNCATED_MC
    assert not rep.boundary


def test_regime_boundaries_go_up():
    assert regime(0.25, 4, 3, 1).regime is Regime.CASE_I
    assert regime(0.25, 4, 3, 1).boundary
    assert regime(0.125, 4, 3, 1).regime is Regime.CASE_II
    t3 = thresholds(4, 3, 1)[2]
    rep = regime(t3, 4, 3, 1)
    assert rep.regime is Regime.CASE_III and rep.boundary
    assert rep.recommended_method is Recommended.CV


def test_regime_to_dict():
    d = regime(0.05, 4, 3, 1).to_dict()
    assert d["regime"] == "RareEvent" and d["recommended_method"] == "TruncatedMC"
    assert d["s"] == 0.05 and len(d["thresholds"]) == 3


def test_optimal_k_examples():
    assert optimal_k(729, 0.999, 1, 0) == 81
    assert optimal_k(729, 0.5, 1, 0.5) == 1
    assert optimal_k(729, 0.5, 1, 2.0) == 1
    assert optimal_k(2, 0.9, 1, 0) == 1
    # exponent 2(0.5 - 0.25)/2 = 0.25
    assert optimal_k(2**12, 0.5, 1, 0.25) == 8


def test_optimal_k_scale_and_clamp():
    assert optimal_k(1000, 0.9, 1, 0, c=100) == 500
    assert optimal_k(1000, 0.9, 1, 0, c=1e-6) == 1


def test_optimal_k_rejects():
    with pytest.raises(ParameterError):
        optimal_k(1, 0.5, 1, 0)
    with pytest.raises(ParameterError):
        optimal_k(100, 1.0, 1, 0)
    with pytest.raises(ParameterError):
        optimal_k(100, 0.0, 1, 0)


@settings(max_examples=200)
@given(st.integers(2, 10**6), st.floats(0.01, 0.99), st.integers(1, 3), st.floats(0, 2))
def test_optimal_k_in_range(n, s, d, gamma):
    k = optimal_k(n, s, d, gamma)
    assert 1 <= k <= max(1, n // 2)


def test_truncation_exponents():
    assert truncated_mc_exponent(0.05, 4, 3, 1) == pytest.approx(-0.4)
    assert peak_truncated_exponent(0.18, 3) == pytest.approx(-0.46)
    assert peak_truncated_exponent(0.4, 3, 2) == pytest.approx(-0.4)


def test_theory_table():
    t = theory_table(0.05, 4, 3, 1, gamma=0.25, n_values=(2**8, 2**12))
    assert t["regime"] == "RareEvent"
    assert t["M_schedule"][2**12] == pytest.approx(2 ** (12 * 0.2))
    assert t["integral_exponent"] == pytest.approx(-0.55)
    assert t["k_schedule"][2**8] == 1
    t = theory_table(2, 4, 3, 1)
    assert t["truncated_mc_exponent"] is None and t["M_schedule"][256] is None


def test_theory_table_values_are_finite():
    t = theory_table(0.15, 4, 3, 2, gamma=0.0)
    assert np.isfinite(t["exponent"]) and t["k_schedule"][2**14] >= 1
