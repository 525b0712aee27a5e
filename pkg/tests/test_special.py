import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stablefrac.special import (DomainError, condition_exponential, condition_power, exp_side,
                                hardy_side, power_side, singular_lambda,
                                singular_lambda_closed_form, sobolev_exponent, threshold_n)

S_GRID = [round(0.1 * k, 1) for k in range(1, 10)]


def mp_hardy(n, s):
    return float((mpmath.gamma(mpmath.mpf(n + 2 * s) / 4) / mpmath.gamma(mpmath.mpf(n - 2 * s) / 4)) ** 2)


def mp_exp(n, s):
    return float(mpmath.gamma(mpmath.mpf(n) / 2) * mpmath.gamma(1 + mpmath.mpf(s))
                 / mpmath.gamma(mpmath.mpf(n - 2 * s) / 2))


@pytest.mark.parametrize("n", [2, 3, 5, 8, 9, 12])
@pytest.mark.parametrize("s", [0.1, 0.5, 0.9])
def test_sides_match_multiprecision_gamma(n, s):
    assert hardy_side(n, s) == pytest.approx(mp_hardy(n, s), rel=1e-12)
    assert exp_side(n, s) == pytest.approx(mp_exp(n, s), rel=1e-12)


def test_half_order_values_in_closed_form():
    assert exp_side(3, 0.5) == pytest.approx(math.pi / 4)
    assert exp_side(8, 0.5) == pytest.approx(1.6)
    assert exp_side(2, 0.5) == pytest.approx(0.5)


def test_truth_table_low_dimensions():
    for n in range(1, 8):
        for s in S_GRID:
            if n > 2 * s:
                assert condition_exponential(n, s).satisfied, (n, s)


def test_dimension_eight_and_nine_at_half():
    assert condition_exponential(8, 0.5).verdict == "true"
    assert condition_exponential(9, 0.5).verdict == "false"


def test_dimension_one_small_s_is_satisfied():
    for s in (0.1, 0.2, 0.3, 0.4):
        assert condition_exponential(1, s).satisfied


def test_pole_at_n_equal_2s():
    with pytest.raises(DomainError):
        condition_exponential(1, 0.5)


def test_bad_order_rejected():
    with pytest.raises(DomainError):
        hardy_side(3, 1.2)


@pytest.mark.parametrize("n,s", [(9, 0.5), (11, 0.9)])
def test_power_side_tends_to_exponential_side(n, s):
    errs = [abs(power_side(n, s, p) - exp_side(n, s)) / exp_side(n, s) for p in (1e2, 1e3, 1e4)]
    assert errs[1] <= 1e-2
    assert errs[0] > errs[1] > errs[2]


def test_power_condition_requires_supercritical_exponent():
    with pytest.raises(ValueError):
        condition_power(5, 0.5, sobolev_exponent(5, 0.5))
    assert condition_power(5, 0.5, 3.0).p == 3.0


def test_power_side_against_multiprecision():
    n, s, p = 6, 0.5, 4.0
    t = mpmath.mpf(s) / (p - 1)
    ref = p * mpmath.gamma(n / 2 - t) * mpmath.gamma(s + t) / (mpmath.gamma(t) * mpmath.gamma((n - 2 * s) / 2 - t))
    assert power_side(n, s, p) == pytest.approx(float(ref), rel=1e-12)


def test_threshold_between_seven_and_ten():
    for s in (0.3, 0.5, 0.9):
        n0 = threshold_n(s)
        assert 7 < n0 < 10 * s + 10
        assert hardy_side(n0, s) == pytest.approx(exp_side(n0, s), rel=1e-9)
    assert 8 < threshold_n(0.5) < 9


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(2.0, 30.0))
def test_verdict_agrees_with_threshold(s, n):
    n0 = threshold_n(s)
    if abs(n - n0) > 1e-6:
        assert condition_exponential(n, s).satisfied == (n < n0)


def test_singular_lambda_closed_form_examples():
    assert singular_lambda_closed_form(2, 0.5) == pytest.approx(1.0)
    assert singular_lambda_closed_form(8, 0.5) == pytest.approx(3.2)


@pytest.mark.parametrize("n", [2, 9])
def test_singular_lambda_by_quadrature(n):
    assert singular_lambda(n, 0.5) == pytest.approx(singular_lambda_closed_form(n, 0.5), rel=1e-6)


def test_singular_lambda_scale_free():
    a = singular_lambda(3, 0.5, radius=0.3)
    b = singular_lambda(3, 0.5, radius=0.8)
    assert a == pytest.approx(b, rel=1e-6)


def test_regime_serialization():
    d = condition_power(9, 0.5, 5.0).as_dict()
    assert set(d) == {"n", "s", "p", "lhs", "rhs", "verdict"}
