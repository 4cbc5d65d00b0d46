import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invdiff.special import (
    DomainError,
    MLParams,
    mittag_leffler,
    ml_derivative_identity_check,
    ml_lower_bound,
    ml_upper_bound,
)

# e * erfc(1) and the defining series agree to 40 digits (mpmath, dps=40)
ML_HALF_MINUS_ONE = 0.42758357615580700441


def series_oracle(alpha, beta, z):
    """Defining power series in arbitrary precision, digits sized to the cancellation."""
    peak = abs(z) ** (1.0 / alpha) / math.log(10.0) if z else 0.0
    with mp.workdps(int(peak) + 30):
        z, a, b = mp.mpf(z), mp.mpf(alpha), mp.mpf(beta)
        total, k = mp.mpf(0), 0
        while True:
            term = z**k / mp.gamma(a * k + b)
            total += term
            k += 1
            if k > 10 and abs(term) < mp.mpf(10) ** (-25) * max(abs(total), mp.mpf(10) ** -30):
                return float(total)


def integral_oracle(alpha, x):
    """``E_alpha(-x)`` from its completely monotone integral representation (0 < alpha < 1)."""
    with mp.workdps(30):
        a = mp.mpf(alpha)
        c = mp.cos(a * mp.pi)
        xs = mp.mpf(x) ** (1 / a)

        def f(r):
            return mp.exp(-r * xs) * r ** (a - 1) / (r ** (2 * a) + 2 * r**a * c + 1)

        return float(mp.sin(a * mp.pi) / mp.pi * mp.quad(f, [0, 1 / xs, 1, mp.inf]))


class TestSpotValues:
    def test_exponential_case(self):
        assert mittag_leffler(1.0, 1.0, -1.0) == pytest.approx(math.exp(-1.0), rel=1e-15)

    def test_value_at_zero_is_one(self):
        assert mittag_leffler(0.5, 1.0, 0.0) == 1.0

    def test_value_at_zero_with_beta_alpha(self):
        assert mittag_leffler(0.5, 0.5, 0.0) == pytest.approx(1.0 / math.gamma(0.5), rel=1e-15)

    def test_half_order_at_minus_one(self):
        assert mittag_leffler(0.5, 1.0, -1.0) == pytest.approx(ML_HALF_MINUS_ONE, rel=1e-14)
        assert series_oracle(0.5, 1.0, -1.0) == pytest.approx(ML_HALF_MINUS_ONE, rel=1e-15)

    def test_params_object_evaluates(self):
        assert MLParams(0.5, 1.0)(-1.0) == pytest.approx(ML_HALF_MINUS_ONE, rel=1e-14)

    def test_array_shape_is_preserved(self):
        z = -np.linspace(0, 5, 12).reshape(3, 4)
        assert mittag_leffler(0.7, 1.0, z).shape == (3, 4)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.75, 0.9])
@pytest.mark.parametrize("beta", [1.0, "alpha", 0.5, 1.7])
def test_matches_high_precision_series(alpha, beta):
    beta = alpha if beta == "alpha" else beta
    zs = [-0.0, -0.01, -0.5, -0.99, -1.0, -1.01, -2.0, -4.5, -8.0]
    for z in zs:
        ref = series_oracle(alpha, beta, z)
        got = mittag_leffler(alpha, beta, z)
        assert abs(got - ref) <= 1e-10 * abs(ref) + 1e-15, (z, got, ref)


@pytest.mark.parametrize("alpha", [0.3, 0.6, 0.85])
def test_matches_integral_representation_on_long_range(alpha):
    for x in [2.0, 10.0, 37.0, 100.0]:
        ref = integral_oracle(alpha, x)
        assert mittag_leffler(alpha, 1.0, -x) == pytest.approx(ref, rel=1e-10)
    for x in [150.0, 1e3, 1e5]:
        ref = integral_oracle(alpha, x)
        assert abs(mittag_leffler(alpha, 1.0, -x) - ref) <= 1e-12


class TestBounds:
    def test_upper_bound_values(self):
        assert ml_upper_bound(0.5, 0.0) == 1.0
        assert ml_upper_bound(0.5, 1.0) == pytest.approx(1.0 / (1.0 + 2.0 / math.sqrt(math.pi)), rel=1e-15)
        assert ml_upper_bound(0.5, 1.0) == pytest.approx(0.46984, abs=1e-5)

    def test_lower_bound_values(self):
        assert ml_lower_bound(0.5, 0.0) == 1.0
        assert ml_lower_bound(0.5, 1.0) == pytest.approx(1.0 / (1.0 + math.sqrt(math.pi)), rel=1e-15)
        assert ml_lower_bound(0.5, 1.0) == pytest.approx(0.36069, abs=1e-5)

    def test_bound_instances(self):
        assert mittag_leffler(0.7, 1.0, -3.0) <= ml_upper_bound(0.7, 3.0)
        assert ml_lower_bound(0.3, 5.0) <= mittag_leffler(0.3, 1.0, -5.0)

    def test_lower_bound_rejects_alpha_one(self):
        with pytest.raises(DomainError):
            ml_lower_bound(1.0, 1.0)

    @pytest.mark.parametrize("fn", [ml_lower_bound, ml_upper_bound])
    def test_negative_argument_rejected(self, fn):
        with pytest.raises(DomainError):
            fn(0.5, -1.0)

    @settings(max_examples=200, deadline=None)
    @given(alpha=st.floats(0.01, 0.99), x=st.floats(0.0, 1000.0))
    def test_sandwich(self, alpha, x):
        e = mittag_leffler(alpha, 1.0, -x)
        assert ml_lower_bound(alpha, x) - 1e-12 <= e <= ml_upper_bound(alpha, x) + 1e-12


class TestStructure:
    @pytest.mark.parametrize("alpha", [0.1, 0.3, 0.5, 0.8, 1.0])
    def test_positive_and_strictly_decreasing(self, alpha):
        # e^{-x} underflows in double precision past x ~ 745
        top = 700.0 if alpha == 1.0 else 1000.0
        x = np.concatenate([np.linspace(0, 10, 400), np.geomspace(10.01, top, 400)])
        e = mittag_leffler(alpha, 1.0, -x)
        assert np.all(e > 0) and np.all(e <= 1.0)
        assert np.all(np.diff(e) < 0)

    def test_exponential_consistency(self):
        x = np.linspace(0, 50, 2001)
        assert np.max(np.abs(mittag_leffler(1.0, 1.0, -x) - np.exp(-x))) <= 1e-12

    def test_beta_one_values_in_unit_interval(self):
        x = -np.geomspace(1e-6, 1e4, 300)
        for alpha in (0.2, 0.6, 0.95):
            e = mittag_leffler(alpha, 1.0, x)
            assert np.all((e > 0) & (e <= 1.0))


class TestDerivativeIdentity:
    def test_exponential_case(self):
        assert ml_derivative_identity_check(1.0, 1.0, 1.0, 1e-4) <= 1e-7

    def test_half_order(self):
        assert ml_derivative_identity_check(0.5, math.pi**2, 0.5, 1e-4) <= 1e-5

    def test_near_one_order(self):
        assert ml_derivative_identity_check(0.9, 1.0, 2.0, 1e-4) <= 1e-6

    @pytest.mark.parametrize("alpha,lam,s", [(0.5, math.pi**2, 0.5), (0.9, 1.0, 2.0), (0.3, 2.0, 1.0)])
    def test_second_order_rate(self, alpha, lam, s):
        hs = [4e-2, 2e-2, 1e-2]
        res = [ml_derivative_identity_check(alpha, lam, s, h) for h in hs]
        rates = np.log2(np.array(res[:-1]) / np.array(res[1:]))
        assert np.all(np.abs(rates - 2.0) < 0.2), rates

    def test_step_must_stay_positive(self):
        with pytest.raises(DomainError):
            ml_derivative_identity_check(0.5, 1.0, 0.1, 0.2)


class TestDomain:
    @pytest.mark.parametrize("alpha,beta", [(0.0, 1.0), (1.2, 1.0), (-0.5, 1.0), (0.5, 0.0), (0.5, -1.0)])
    def test_bad_parameters(self, alpha, beta):
        with pytest.raises(DomainError):
            mittag_leffler(alpha, beta, -1.0)

    def test_positive_argument_rejected(self):
        with pytest.raises(DomainError):
            mittag_leffler(0.5, 1.0, 0.5)
