import math

import numpy as np
import pytest
from scipy import stats

from qrffsim.analytic import QrffParams, analytic_bias, analytic_lag_coefficient
from qrffsim.errors import (
    FitFailureError,
    InvalidParameterError,
    NoBracketError,
)
from qrffsim.estimators import estimate_autocorr, estimate_bias
from qrffsim.eventsim import (
    BitStream,
    DetectorParams,
    EventTrace,
    QrffSimConfig,
    apply_detector,
    calibrate_threshold,
    estimate_afterpulsing,
    generate_arrivals,
    inter_arrival_histogram,
    photon_rate_for_detected,
    rts_value_at,
    sample_bits,
    simulate_qrff,
    trace_from_arrivals,
)
from qrffsim.rng import SimSeed

SEED = SimSeed(20260801)


class TestGenerateArrivals:
    def test_zero_rate_empty(self):
        assert generate_arrivals(0.0, 1.0, SEED).size == 0

    def test_rejects_bad_duration(self):
        with pytest.raises(InvalidParameterError):
            generate_arrivals(1e6, 0.0, SEED)

    def test_count_concentration(self):
        # Poisson count within 4 standard deviations of rate*duration
        rate, duration = 2e6, 1.0
        ts = generate_arrivals(rate, duration, SEED)
        expect = rate * duration
        assert abs(ts.size - expect) < 4 * math.sqrt(expect)
        assert ts[0] > 0 and ts[-1] <= duration
        assert np.all(np.diff(ts) > 0)

    def test_gaps_are_exponential(self):
        rate = 1e3
        ts = generate_arrivals(rate, 100.0, SEED)
        gaps = np.diff(ts)
        res = stats.kstest(gaps, "expon", args=(0, 1 / rate))
        assert res.pvalue > 0.01

    def test_deterministic(self):
        a = generate_arrivals(5e5, 0.3, SimSeed(9, 4))
        b = generate_arrivals(5e5, 0.3, SimSeed(9, 4))
        assert np.array_equal(a, b)


class TestEventTrace:
    def test_validates_ordering(self):
        with pytest.raises(InvalidParameterError):
            EventTrace(np.array([2.0, 1.0]), 3.0, np.zeros(2, dtype=np.uint8))

    def test_validates_range(self):
        with pytest.raises(InvalidParameterError):
            EventTrace(np.array([0.5, 4.0]), 3.0, np.zeros(2, dtype=np.uint8))


class TestApplyDetector:
    def test_dead_time_filters_close_pair(self):
        params = DetectorParams(photon_rate=0.0, dead_time_hold=4e-9,
                                dead_time_recharge=4e-9)
        trace = apply_detector(np.array([10e-9, 11e-9]), params, 1e-6, SEED)
        assert len(trace) == 1

    def test_no_two_detections_within_dead_time(self):
        params = DetectorParams(photon_rate=50e6, dark_rate=1e6,
                                dead_time_hold=3e-9, dead_time_recharge=5e-9,
                                afterpulse_prob=0.01, trap_lifetime=25e-9)
        photons = generate_arrivals(params.photon_rate, 0.02, SEED)
        trace = apply_detector(photons, params, 0.02, SEED)
        assert np.min(np.diff(trace.timestamps)) >= params.dead_time

    def test_detected_rate_matches_nonparalyzable_formula(self):
        lam = 80e6
        params = DetectorParams(photon_rate=lam, dead_time_hold=4e-9,
                                dead_time_recharge=4e-9)
        photons = generate_arrivals(lam, 1.0, SEED)
        trace = apply_detector(photons, params, 1.0, SEED)
        expected = lam / (1 + lam * params.dead_time)
        assert len(trace) / 1.0 == pytest.approx(expected, rel=0.01)

    def test_detected_gaps_are_shifted_exponential(self):
        # dead-time thinning of a Poisson process gives gaps tau + Exp(lam)
        lam, tau = 1e6, 2e-6
        params = DetectorParams(photon_rate=lam, dead_time_hold=tau / 2,
                                dead_time_recharge=tau / 2)
        photons = generate_arrivals(lam, 30.0, SEED)
        trace = apply_detector(photons, params, 30.0, SEED)
        gaps = np.diff(trace.timestamps) - tau
        res = stats.kstest(gaps, "expon", args=(0, 1 / lam))
        assert res.pvalue > 0.01

    def test_rejects_unsorted_photons(self):
        params = DetectorParams(photon_rate=0.0)
        with pytest.raises(InvalidParameterError):
            apply_detector(np.array([2e-9, 1e-9]), params, 1e-6, SEED)

    def test_afterpulse_flags_follow_detections(self):
        params = DetectorParams(photon_rate=1e5, dead_time_hold=4e-9,
                                dead_time_recharge=4e-9,
                                afterpulse_prob=0.05, trap_lifetime=25e-9)
        photons = generate_arrivals(1e5, 5.0, SEED)
        trace = apply_detector(photons, params, 5.0, SEED)
        ap = np.flatnonzero(trace.flags == 2)
        assert ap.size > 0
        # every afterpulse sits within a handful of lifetimes of its parent
        gaps_to_prev = trace.timestamps[ap] - trace.timestamps[ap - 1]
        assert np.all(gaps_to_prev < 20 * params.trap_lifetime)

    def test_disabled_afterpulsing_keeps_poisson_statistics(self):
        lam = 1e4
        params = DetectorParams(photon_rate=lam, dead_time_hold=4e-9,
                                dead_time_recharge=4e-9, afterpulse_prob=0.0)
        photons = generate_arrivals(lam, 30.0, SEED)
        trace = apply_detector(photons, params, 30.0, SEED)
        assert set(np.unique(trace.flags)) == {0}
        res = stats.kstest(np.diff(trace.timestamps), "expon", args=(0, 1 / lam))
        assert res.pvalue > 0.01


class TestRtsValue:
    def test_no_events_is_zero(self):
        trace = trace_from_arrivals(np.array([]), 1.0)
        assert rts_value_at(trace, 1e-10, 1e-10, 0.7) == 0.0

    def test_midpoint_of_rise(self):
        trace = trace_from_arrivals(np.array([1e-6]), 1.0)
        v = rts_value_at(trace, 725e-12, 125e-12, 1e-6 + 362.5e-12)
        assert v == pytest.approx(0.5, rel=1e-9)

    def test_completed_fall_returns_zero(self):
        t_r, t_f = 725e-12, 125e-12
        events = np.array([1e-6, 1e-6 + 2e-9])
        trace = trace_from_arrivals(events, 1.0)
        assert rts_value_at(trace, t_r, t_f, events[1] + t_f) == 0.0

    def test_out_of_range_query(self):
        trace = trace_from_arrivals(np.array([0.5]), 1.0)
        with pytest.raises(InvalidParameterError):
            rts_value_at(trace, 1e-10, 1e-10, 2.0)

    def test_interrupted_rise_resumes_from_current_level(self):
        t_r = 1e-9
        events = np.array([1e-6, 1e-6 + 0.25e-9])  # toggle mid-rise at 0.25
        trace = trace_from_arrivals(events, 1.0)
        v = rts_value_at(trace, t_r, 1e-9, events[1])
        assert v == pytest.approx(0.25, rel=1e-9)

    def test_vectorized_matches_scalar(self):
        events = generate_arrivals(5e6, 1e-3, SEED)
        trace = trace_from_arrivals(events, 1e-3)
        ts = np.linspace(0, 1e-3, 57)
        vec = rts_value_at(trace, 3e-10, 2e-10, ts)
        for t, v in zip(ts, vec):
            assert rts_value_at(trace, 3e-10, 2e-10, float(t)) == pytest.approx(v, abs=1e-15)


class TestSampleBits:
    def test_empty_trace_all_zero(self):
        trace = trace_from_arrivals(np.array([]), 1e-3)
        bs = sample_bits(trace, 1e-10, 1e-10, 1e6, 0.5)
        assert bs.n_bits == math.floor(1e-3 * 1e6) + 1
        assert bs.ones() == 0

    def test_bit_count_formula(self):
        trace = trace_from_arrivals(np.array([]), 1e-3)
        phase = 2e-7
        bs = sample_bits(trace, 1e-10, 1e-10, 1e6, 0.5, phase=phase)
        assert bs.n_bits == math.floor((1e-3 - phase) * 1e6) + 1

    def test_rejects_bad_phase(self):
        trace = trace_from_arrivals(np.array([]), 1e-3)
        with pytest.raises(InvalidParameterError):
            sample_bits(trace, 1e-10, 1e-10, 1e6, 0.5, phase=2e-6)

    def test_measured_bias_tracks_model(self):
        # desk-scale check of the closed-form bias at a visibly biased point
        lam, f_bg, eta, t_r, t_f = 80e6, 25e6, 0.499, 100e-12, 500e-12
        n_bits = 2_000_000
        duration = (n_bits - 1) / f_bg + 1e-6
        arr = generate_arrivals(lam, duration, SEED)
        trace = trace_from_arrivals(arr, duration)
        bs = sample_bits(trace, t_r, t_f, f_bg, eta, phase=1e-6 % (1 / f_bg))
        est = estimate_bias(bs.bits()[:n_bits])
        model = analytic_bias(QrffParams(lam, f_bg, t_r, t_f, eta))
        assert abs(est.b_hat - model) < 3 * est.sigma

    def test_measured_lag1_tracks_model(self):
        lam, f_bg = 40e6, 25e6
        cfg = QrffSimConfig(f_bg=f_bg, eta=0.5, t_r=100e-12, t_f=100e-12,
                            n_bits=2_000_000, lambda_d=lam)
        bs = simulate_qrff(cfg, SEED)
        a1 = estimate_autocorr(bs, 1)[0]
        pred = analytic_lag_coefficient(QrffParams(lam, f_bg, 100e-12, 100e-12, 0.5), 1)
        assert abs(a1.a_hat - pred) < 3 / math.sqrt(a1.n)


class TestSimulateQrff:
    def test_zero_rate_gives_all_zero_stream(self):
        cfg = QrffSimConfig(f_bg=1e6, eta=0.5, t_r=1e-10, t_f=1e-10,
                            n_bits=10_000, lambda_d=0.0)
        bs = simulate_qrff(cfg, SEED)
        assert bs.ones() == 0
        assert bs.provenance["realized_lambda_d"] == 0.0

    def test_determinism(self):
        cfg = QrffSimConfig(f_bg=25e6, eta=0.5, t_r=1e-10, t_f=1e-10,
                            n_bits=500_000, lambda_d=60e6)
        a = simulate_qrff(cfg, SimSeed(1, 2))
        b = simulate_qrff(cfg, SimSeed(1, 2))
        assert np.array_equal(a.packed, b.packed)
        c = simulate_qrff(cfg, SimSeed(1, 3))
        assert not np.array_equal(a.packed, c.packed)

    def test_windowed_equals_one_shot_pipeline(self):
        # the streaming engine must reproduce the plain op composition
        seed = SimSeed(42, 3)
        det = DetectorParams(photon_rate=40e6, dark_rate=1e6,
                             dead_time_hold=2e-9, dead_time_recharge=2e-9,
                             afterpulse_prob=0.005, trap_lifetime=25e-9)
        cfg = QrffSimConfig(f_bg=25e6, eta=0.47, t_r=3e-10, t_f=1.5e-10,
                            n_bits=1_500_000, detector=det, warmup=3e-6)
        bs = simulate_qrff(cfg, seed)
        duration = bs.provenance["duration"]
        photons = generate_arrivals(det.photon_rate, duration, seed)
        trace = apply_detector(photons, det, duration, seed)
        assert len(trace) == bs.provenance["n_detections"]
        full = sample_bits(trace, cfg.t_r, cfg.t_f, cfg.f_bg, cfg.eta)
        # samples of the windowed run start at warmup; pick them out of the
        # full grid (warmup is an exact multiple of the sample period here)
        k0 = round(cfg.warmup * cfg.f_bg)
        assert np.array_equal(bs.bits(), full.bits()[k0:k0 + cfg.n_bits])

    def test_realized_rate_reported(self):
        cfg = QrffSimConfig(f_bg=25e6, eta=0.5, t_r=1e-10, t_f=1e-10,
                            n_bits=1_000_000, lambda_d=50e6)
        bs = simulate_qrff(cfg, SEED)
        expect = 50e6
        assert bs.provenance["realized_lambda_d"] == pytest.approx(expect, rel=0.01)

    def test_provenance_reproduces_stream(self):
        cfg = QrffSimConfig(f_bg=25e6, eta=0.48, t_r=2e-10, t_f=1e-10,
                            n_bits=200_000, lambda_d=30e6)
        bs = simulate_qrff(cfg, SimSeed(77, 5))
        p = bs.provenance
        rebuilt_cfg = QrffSimConfig(
            f_bg=p["config"]["f_bg"], eta=p["config"]["eta"],
            t_r=p["config"]["t_r"], t_f=p["config"]["t_f"],
            n_bits=p["config"]["n_bits"], lambda_d=p["config"]["lambda_d"],
            phase=p["config"]["phase"], warmup=p["config"]["warmup"])
        again = simulate_qrff(rebuilt_cfg, SimSeed(p["seed"], p["stream_id"]))
        assert np.array_equal(bs.packed, again.packed)

    def test_config_validation(self):
        with pytest.raises(InvalidParameterError):
            QrffSimConfig(f_bg=1e6, eta=0.5, t_r=1e-10, t_f=1e-10, n_bits=10)
        with pytest.raises(InvalidParameterError):
            QrffSimConfig(f_bg=1e6, eta=0.5, t_r=1e-10, t_f=1e-10, n_bits=10,
                          lambda_d=1e6, detector=DetectorParams(photon_rate=1e6))


class TestHistogramAndAfterpulsing:
    def test_empty_trace_raises_on_estimate(self):
        trace = trace_from_arrivals(np.array([]), 1.0)
        hist = inter_arrival_histogram(trace, 1e-8, 1e-5)
        assert hist.counts.sum() == 0
        with pytest.raises(FitFailureError):
            estimate_afterpulsing(hist, 8e-9)

    def test_poisson_histogram_fits_exponential(self):
        lam = 1e5
        arr = generate_arrivals(lam, 100.0, SEED)
        trace = trace_from_arrivals(arr, 100.0)
        hist = inter_arrival_histogram(trace, 2e-6, 1e-4)
        centers = hist.centers
        expected = hist.counts.sum() * (np.exp(-lam * hist.edges[:-1])
                                        - np.exp(-lam * hist.edges[1:])) \
            / (1 - math.exp(-lam * hist.edges[-1]))
        mask = expected > 10
        chi2 = float(np.sum((hist.counts[mask] - expected[mask]) ** 2 / expected[mask]))
        p = stats.chi2.sf(chi2, int(mask.sum()) - 1)
        assert p > 0.01

    def test_pure_poisson_estimates_near_zero(self):
        lam = 1e4
        params = DetectorParams(photon_rate=lam, dead_time_hold=4e-9,
                                dead_time_recharge=4e-9)
        photons = generate_arrivals(lam, 100.0, SEED)
        trace = apply_detector(photons, params, 100.0, SEED)
        hist = inter_arrival_histogram(trace, 4e-9, 2e-6)
        est = estimate_afterpulsing(hist, params.dead_time)
        assert abs(est) < 2e-4

    def test_recovers_injected_probability(self):
        lam, p_ap = 1e4, 1e-2
        params = DetectorParams(photon_rate=lam, dead_time_hold=4e-9,
                                dead_time_recharge=4e-9,
                                afterpulse_prob=p_ap, trap_lifetime=25e-9)
        photons = generate_arrivals(lam, 100.0, SEED)  # ~1e6 detections
        trace = apply_detector(photons, params, 100.0, SEED)
        hist = inter_arrival_histogram(trace, 4e-9, 2e-6)
        est = estimate_afterpulsing(hist, params.dead_time)
        assert est == pytest.approx(p_ap, rel=0.10)

    def test_excess_confined_to_trap_region(self):
        lam, p_ap, trap = 1e4, 1e-2, 25e-9
        params = DetectorParams(photon_rate=lam, dead_time_hold=4e-9,
                                dead_time_recharge=4e-9,
                                afterpulse_prob=p_ap, trap_lifetime=trap)
        photons = generate_arrivals(lam, 100.0, SEED)
        trace = apply_detector(photons, params, 100.0, SEED)
        hist = inter_arrival_histogram(trace, 4e-9, 2e-6)
        centers = hist.centers
        baseline = np.median(hist.counts[centers > 1e-6].astype(float))
        tau_d = params.dead_time
        near = (centers >= tau_d) & (centers < tau_d + 4 * trap)
        far = (centers >= tau_d + 5 * trap) & (centers < tau_d + 20 * trap)
        excess_near = hist.counts[near].sum() - baseline * near.sum()
        excess_far = hist.counts[far].sum() - baseline * far.sum()
        assert excess_near > 20 * max(excess_far, 1)


class TestPhotonRateInversion:
    def test_round_trip(self):
        tau = 8e-9
        raw = photon_rate_for_detected(80e6, tau)
        assert raw / (1 + raw * tau) == pytest.approx(80e6, rel=1e-12)

    def test_unreachable_rate(self):
        with pytest.raises(InvalidParameterError):
            photon_rate_for_detected(2e8, 8e-9)


class TestCalibration:
    def test_symmetric_edges_converge_to_half(self):
        base = QrffSimConfig(f_bg=25e6, eta=0.5, t_r=200e-12, t_f=200e-12,
                             n_bits=1, lambda_d=80e6)
        res = calibrate_threshold(base, target_sigma=1e-3, seed=SimSeed(5),
                                  n_start=1 << 15, n_max=1 << 23)
        assert res.converged
        assert res.eta_hat == pytest.approx(0.5, abs=0.05)

    def test_unattainable_target_rejected(self):
        base = QrffSimConfig(f_bg=25e6, eta=0.5, t_r=200e-12, t_f=200e-12,
                             n_bits=1, lambda_d=80e6)
        with pytest.raises(InvalidParameterError):
            calibrate_threshold(base, target_sigma=1e-5, seed=SimSeed(5),
                                n_max=1 << 18)

    def test_no_bracket_when_fall_time_zero(self):
        # with t_f = 0 the bias is negative for every threshold, so the low
        # endpoint can never show a confident positive sign
        base = QrffSimConfig(f_bg=25e6, eta=0.5, t_r=400e-12, t_f=0.0,
                             n_bits=1, lambda_d=80e6)
        with pytest.raises(NoBracketError):
            calibrate_threshold(base, target_sigma=5e-3, seed=SimSeed(5),
                                n_start=1 << 16, n_max=1 << 18)
