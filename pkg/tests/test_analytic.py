import math

import pytest
from hypothesis import given, strategies as st

from qrffsim.analytic import (
    EntropyBudget,
    QrffParams,
    analytic_autocorr,
    analytic_bias,
    analytic_lag_coefficient,
    binary_shannon_entropy,
    entropy_compliance,
    max_fbg_for_corr_limit,
    zero_bias_threshold,
)
from qrffsim.errors import InvalidParameterError


def make_params(lambda_d=80e6, f_bg=25e6, t_r=100e-12, t_f=100e-12, eta=0.5):
    return QrffParams(lambda_d, f_bg, t_r, t_f, eta)


class TestParamsValidation:
    def test_accepts_reference_point(self):
        make_params()

    @pytest.mark.parametrize("kw", [
        {"lambda_d": 0.0},
        {"lambda_d": -1.0},
        {"f_bg": 0.0},
        {"t_r": -1e-12},
        {"eta": 0.0},
        {"eta": 1.0},
        {"eta": 1.5},
    ])
    def test_rejects_bad_fields(self, kw):
        with pytest.raises(InvalidParameterError):
            make_params(**kw)

    def test_rejects_zero_edges(self):
        with pytest.raises(InvalidParameterError):
            make_params(t_r=0.0, t_f=0.0)

    def test_rejects_edges_longer_than_half_period(self):
        # (t_r + t_f) * lambda_d must stay below 1
        with pytest.raises(InvalidParameterError):
            make_params(lambda_d=1e9, t_r=600e-12, t_f=600e-12)


class TestBias:
    def test_paper_figure_point_40mcps(self):
        p = make_params(lambda_d=40e6, t_r=725e-12, t_f=125e-12, eta=0.475)
        expected = (125e-12 - 0.475 * 850e-12) / 2 * 40e6
        assert analytic_bias(p) == pytest.approx(expected, rel=1e-12)
        assert analytic_bias(p) == pytest.approx(-5.575e-3, rel=1e-3)

    def test_symmetric_edges_centered_threshold_is_unbiased(self):
        p = make_params(t_r=300e-12, t_f=300e-12, eta=0.5, lambda_d=55e6)
        assert analytic_bias(p) == 0.0

    def test_doubling_rate_doubles_bias(self):
        p40 = make_params(lambda_d=40e6, t_r=725e-12, t_f=125e-12, eta=0.475)
        p80 = make_params(lambda_d=80e6, t_r=725e-12, t_f=125e-12, eta=0.475)
        assert analytic_bias(p80) == pytest.approx(2 * analytic_bias(p40), rel=1e-12)
        assert analytic_bias(p80) == pytest.approx(-1.115e-2, rel=1e-3)

    @given(
        k=st.floats(0.01, 10.0),
        lam=st.floats(1e3, 9e7),
        eta=st.floats(0.01, 0.99),
    )
    def test_linearity_in_rate(self, k, lam, eta):
        t_r, t_f = 400e-12, 100e-12
        if (t_r + t_f) * max(lam, k * lam) >= 1:
            return
        b1 = analytic_bias(QrffParams(lam, 25e6, t_r, t_f, eta))
        bk = analytic_bias(QrffParams(k * lam, 25e6, t_r, t_f, eta))
        assert bk == pytest.approx(k * b1, rel=1e-9, abs=1e-18)


class TestAutocorrAndLags:
    def test_zero_lag_is_one(self):
        assert analytic_autocorr(12e6, 0.0) == 1.0

    def test_40mcps_at_40ns(self):
        assert analytic_autocorr(40e6, 40e-9) == pytest.approx(math.exp(-3.2), rel=1e-12)

    def test_80mcps_at_40ns(self):
        assert analytic_autocorr(80e6, 40e-9) == pytest.approx(math.exp(-6.4), rel=1e-12)

    def test_symmetric_in_lag_sign(self):
        assert analytic_autocorr(3e6, -1e-7) == analytic_autocorr(3e6, 1e-7)

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(InvalidParameterError):
            analytic_autocorr(0.0, 1e-9)

    def test_lag1_80mcps_25mhz(self):
        p = make_params(lambda_d=80e6)
        assert analytic_lag_coefficient(p, 1) == pytest.approx(math.exp(-6.4), rel=1e-12)
        assert analytic_lag_coefficient(p, 1) == pytest.approx(1.66e-3, rel=1e-2)

    def test_lag2_40mcps_25mhz(self):
        # lag-2 correlation is the telegraph autocorrelation at 2/f_bg
        p = make_params(lambda_d=40e6)
        assert analytic_lag_coefficient(p, 2) == pytest.approx(math.exp(-6.4), rel=1e-12)

    def test_extreme_rate_underflows_to_zero(self):
        p = make_params(lambda_d=1e7)
        # exponent -2*lambda*i/f drives the value below representable range
        tiny = QrffParams(9.9e6, 25e6, 1e-12, 1e-12, 0.5)
        assert analytic_lag_coefficient(tiny, 10_000) == 0.0

    def test_rejects_lag_below_one(self):
        with pytest.raises(InvalidParameterError):
            analytic_lag_coefficient(make_params(), 0)

    @given(i=st.integers(1, 50), lam=st.floats(1e6, 1e8), f=st.floats(1e6, 1e8))
    def test_matches_autocorr_at_lag_times(self, i, lam, f):
        p = QrffParams(lam, f, 1e-12, 1e-12, 0.5)
        assert analytic_lag_coefficient(p, i) == analytic_autocorr(lam, i / f)

    def test_strictly_decreasing_in_lag_and_rate(self):
        p = make_params(lambda_d=40e6)
        coeffs = [analytic_lag_coefficient(p, i) for i in range(1, 6)]
        assert all(a > b for a, b in zip(coeffs, coeffs[1:]))
        assert all(0 < a < 1 for a in coeffs)
        hi = make_params(lambda_d=80e6)
        assert analytic_lag_coefficient(hi, 1) < analytic_lag_coefficient(p, 1)


class TestZeroBiasThreshold:
    def test_symmetric_edges(self):
        assert zero_bias_threshold(2e-10, 2e-10) == 0.5

    def test_paper_edge_values(self):
        assert zero_bias_threshold(725e-12, 125e-12) == pytest.approx(125 / 850, rel=1e-12)

    def test_instant_rise(self):
        assert zero_bias_threshold(0.0, 3e-10) == 1.0

    def test_rejects_both_zero(self):
        with pytest.raises(InvalidParameterError):
            zero_bias_threshold(0.0, 0.0)

    @given(t_r=st.floats(1e-13, 1e-9), t_f=st.floats(1e-13, 1e-9),
           lam=st.floats(1e6, 1e8))
    def test_nulls_the_bias(self, t_r, t_f, lam):
        if (t_r + t_f) * lam >= 1:
            return
        eta = zero_bias_threshold(t_r, t_f)
        if not 0 < eta < 1:
            return
        # zero in exact arithmetic; floats leave at most a few ulps of t_f
        ulp_bound = 4 * 2.3e-16 * t_f * lam
        assert abs(analytic_bias(QrffParams(lam, 25e6, t_r, t_f, eta))) <= ulp_bound


class TestEntropy:
    def test_uniform(self):
        assert binary_shannon_entropy(0.5) == 1.0

    def test_degenerate(self):
        assert binary_shannon_entropy(0.0) == 0.0
        assert binary_shannon_entropy(1.0) == 0.0

    def test_p532(self):
        direct = -(0.532 * math.log2(0.532) + 0.468 * math.log2(0.468))
        assert binary_shannon_entropy(0.532) == pytest.approx(direct, rel=1e-12)
        assert binary_shannon_entropy(0.532) == pytest.approx(0.99704, abs=5e-6)

    def test_quadratic_series_near_half(self):
        # H(0.5 + b) ~ 1 - (2/ln 2) * b^2 for small b
        for b in (1e-3, 5e-3, 1e-2):
            series = 1.0 - 2.0 / math.log(2.0) * b * b
            assert binary_shannon_entropy(0.5 + b) == pytest.approx(series, abs=5 * b ** 4 / math.log(2))

    @given(p=st.floats(0.0, 1.0))
    def test_symmetry_and_bound(self, p):
        h = binary_shannon_entropy(p)
        assert 0.0 <= h <= 1.0
        assert h == pytest.approx(binary_shannon_entropy(1.0 - p), abs=1e-12)

    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidParameterError):
            binary_shannon_entropy(-0.1)
        with pytest.raises(InvalidParameterError):
            binary_shannon_entropy(1.1)


class TestCompliance:
    def test_minimum_dead_time_row_25mhz_passes(self):
        v = entropy_compliance(2.39e-4, [8.32e-4])
        assert v.bias_ok and v.corr_ok and v.entropy_ok
        assert v.passed

    def test_row_30mhz_fails_on_correlation(self):
        v = entropy_compliance(4.21e-4, [1.45e-3])
        assert v.bias_ok and v.entropy_ok
        assert not v.corr_ok and not v.passed

    def test_empty_correlations_pass(self):
        assert entropy_compliance(0.0, []).passed

    def test_budget_validation(self):
        with pytest.raises(InvalidParameterError):
            EntropyBudget(bias_limit=0.0)
        with pytest.raises(InvalidParameterError):
            EntropyBudget(entropy_floor=1.5)


class TestMaxFbg:
    def test_80mcps_at_1e_minus_3(self):
        assert max_fbg_for_corr_limit(80e6, 1e-3) == pytest.approx(
            -2 * 80e6 / math.log(1e-3), rel=1e-12)
        assert max_fbg_for_corr_limit(80e6, 1e-3) == pytest.approx(23.16e6, rel=1e-3)

    def test_log_cancellation(self):
        assert max_fbg_for_corr_limit(80e6, math.exp(-2)) == pytest.approx(80e6, rel=1e-12)

    def test_linear_in_rate(self):
        assert max_fbg_for_corr_limit(40e6, 1e-3) == pytest.approx(
            0.5 * max_fbg_for_corr_limit(80e6, 1e-3), rel=1e-12)

    @given(lam=st.floats(1e6, 1e8), limit=st.floats(1e-6, 0.9))
    def test_round_trips_through_lag_coefficient(self, lam, limit):
        f = max_fbg_for_corr_limit(lam, limit)
        p = QrffParams(lam, f, 1e-12, 1e-12, 0.5)
        assert analytic_lag_coefficient(p, 1) == pytest.approx(limit, rel=1e-12)

    def test_rejects_bad_limit(self):
        with pytest.raises(InvalidParameterError):
            max_fbg_for_corr_limit(80e6, 0.0)
        with pytest.raises(InvalidParameterError):
            max_fbg_for_corr_limit(80e6, 1.0)
