"""Discrete-event Monte-Carlo engine for one bit generator.

The chain is: Poisson photon/dark arrivals -> detector front-end
(non-paralyzable dead time, optional afterpulsing) -> toggle flip-flop
with finite linear edges -> threshold sampling at the bit-generation
clock.  Long runs are simulated in fixed-size sample windows with carried
state, which keeps memory flat while producing streams bit-identical to a
one-shot evaluation of the same seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import _kernels
from .analytic import QrffParams
from .errors import FitFailureError, InvalidParameterError, NoBracketError
from .rng import (
    CH_AFTERPULSE,
    CH_DARK,
    CH_PHOTON,
    PoissonStream,
    SimSeed,
    UniformStream,
    substream,
)

# Per-event origin tags stored in EventTrace.flags.
FLAG_PHOTON = 0
FLAG_DARK = 1
FLAG_AFTERPULSE = 2

_SAMPLES_PER_WINDOW = 1 << 20


@dataclass(frozen=True)
class DetectorParams:
    """Behavioral single-photon detector model.

    photon_rate : photons/s reaching the multiplication region (detection
                  efficiency already folded in)
    dark_rate   : dark counts/s
    dead_time_hold, dead_time_recharge : the two blocking phases after an
                  avalanche, s; both phases reject arrivals
    afterpulse_prob : probability per accepted avalanche of scheduling one
                  delayed spurious candidate
    trap_lifetime : exponential decay constant of the release delay, s
    """

    photon_rate: float
    dark_rate: float = 0.0
    dead_time_hold: float = 4e-9
    dead_time_recharge: float = 4e-9
    afterpulse_prob: float = 0.0
    trap_lifetime: float = 25e-9

    def __post_init__(self):
        if self.photon_rate < 0 or self.dark_rate < 0:
            raise InvalidParameterError("rates must be >= 0")
        if self.dead_time_hold < 0 or self.dead_time_recharge < 0:
            raise InvalidParameterError("dead-time phases must be >= 0")
        if not self.dead_time_hold + self.dead_time_recharge > 0:
            raise InvalidParameterError("total dead time must be > 0")
        if not 0 <= self.afterpulse_prob < 1:
            raise InvalidParameterError("afterpulse_prob must lie in [0, 1)")
        if self.afterpulse_prob > 0 and not self.trap_lifetime > 0:
            raise InvalidParameterError("trap_lifetime must be > 0 when afterpulsing is on")

    @property
    def dead_time(self) -> float:
        return self.dead_time_hold + self.dead_time_recharge


@dataclass(frozen=True)
class EventTrace:
    """Time-ordered detection timestamps over [0, duration]."""

    timestamps: np.ndarray
    duration: float
    flags: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        fl = np.asarray(self.flags, dtype=np.uint8)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "flags", fl)
        if not self.duration > 0:
            raise InvalidParameterError("duration must be > 0")
        if ts.shape != fl.shape:
            raise InvalidParameterError("timestamps and flags must have equal length")
        if ts.size:
            if ts[0] < 0 or ts[-1] > self.duration:
                raise InvalidParameterError("timestamps must lie within [0, duration]")
            if ts.size > 1 and not np.all(np.diff(ts) > 0):
                raise InvalidParameterError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return int(self.timestamps.size)


def trace_from_arrivals(timestamps: np.ndarray, duration: float) -> EventTrace:
    """Wrap raw arrival times (no detector applied) as an all-photon trace."""
    ts = np.asarray(timestamps, dtype=np.float64)
    return EventTrace(ts, duration, np.zeros(ts.size, dtype=np.uint8))


@dataclass(frozen=True)
class BitStream:
    """Packed generated bits plus the provenance needed to reproduce them.

    Bits are packed LSB-first within each byte; a final partial byte is
    zero-padded.
    """

    packed: np.ndarray
    n_bits: int
    f_bg: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        pk = np.ascontiguousarray(np.asarray(self.packed, dtype=np.uint8))
        object.__setattr__(self, "packed", pk)
        if self.n_bits < 0:
            raise InvalidParameterError("n_bits must be >= 0")
        if pk.size != (self.n_bits + 7) // 8:
            raise InvalidParameterError("packed length inconsistent with n_bits")

    @classmethod
    def from_bits(cls, bits: np.ndarray, f_bg: float, provenance: dict | None = None) -> "BitStream":
        b = np.asarray(bits, dtype=np.uint8)
        packed = np.packbits(b, bitorder="little")
        return cls(packed, int(b.size), f_bg, provenance or {})

    def bits(self) -> np.ndarray:
        """Unpacked 0/1 array of length n_bits."""
        return np.unpackbits(self.packed, count=self.n_bits, bitorder="little")

    def ones(self) -> int:
        return int(np.count_nonzero(self.bits()))

    def __len__(self) -> int:
        return self.n_bits


@dataclass(frozen=True)
class Histogram:
    """Inter-arrival histogram over [0, max_delay] with uniform bins."""

    edges: np.ndarray
    counts: np.ndarray
    n_events: int

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])


@dataclass(frozen=True)
class QrffSimConfig:
    """Full parameterization of one simulated bit generator.

    Exactly one of ``lambda_d`` (ideal Poisson toggle source at that rate,
    no detector imperfections) or ``detector`` (full front-end chain) must
    be given.  ``warmup`` seconds are simulated and discarded before the
    first sample so the telegraph signal is stationary; the default is 100
    mean toggle periods.
    """

    f_bg: float
    eta: float
    t_r: float
    t_f: float
    n_bits: int
    lambda_d: Optional[float] = None
    detector: Optional[DetectorParams] = None
    phase: float = 0.0
    warmup: Optional[float] = None

    def __post_init__(self):
        if (self.lambda_d is None) == (self.detector is None):
            raise InvalidParameterError("exactly one of lambda_d or detector is required")
        if self.lambda_d is not None and self.lambda_d < 0:
            raise InvalidParameterError("lambda_d must be >= 0")
        if not self.f_bg > 0:
            raise InvalidParameterError("f_bg must be > 0")
        if not 0 < self.eta < 1:
            raise InvalidParameterError("eta must lie strictly inside (0, 1)")
        if self.t_r < 0 or self.t_f < 0 or not self.t_r + self.t_f > 0:
            raise InvalidParameterError("edge times must be >= 0 with t_r + t_f > 0")
        if self.n_bits < 0:
            raise InvalidParameterError("n_bits must be >= 0")
        if not 0 <= self.phase < 1.0 / self.f_bg:
            raise InvalidParameterError("phase must lie in [0, 1/f_bg)")
        if self.warmup is not None and self.warmup < 0:
            raise InvalidParameterError("warmup must be >= 0")

    @property
    def source_rate(self) -> float:
        """Expected detection rate feeding the flip-flop."""
        if self.lambda_d is not None:
            return self.lambda_d
        raw = self.detector.photon_rate + self.detector.dark_rate
        return raw / (1.0 + raw * self.detector.dead_time)

    def effective_warmup(self) -> float:
        if self.warmup is not None:
            return self.warmup
        rate = self.source_rate
        return 100.0 / rate if rate > 0 else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


def photon_rate_for_detected(target_rate: float, dead_time: float) -> float:
    """Photon rate whose dead-time-limited detected rate equals the target.

    Inverts detected = raw / (1 + raw * dead_time).
    """
    if target_rate < 0 or dead_time < 0:
        raise InvalidParameterError("rates and dead time must be >= 0")
    loss = 1.0 - target_rate * dead_time
    if loss <= 0:
        raise InvalidParameterError("target rate unreachable: exceeds 1/dead_time")
    return target_rate / loss


def generate_arrivals(rate: float, duration: float, seed: SimSeed,
                      channel: int = CH_PHOTON) -> np.ndarray:
    """Homogeneous Poisson arrival times on (0, duration].

    Gaps are i.i.d. exponential with mean 1/rate, drawn by inverse CDF from
    the (seed, channel) substream; rate 0 gives an empty array.
    """
    if not duration > 0:
        raise InvalidParameterError("duration must be > 0")
    if rate < 0:
        raise InvalidParameterError("rate must be >= 0")
    if rate == 0:
        return np.empty(0)
    stream = PoissonStream(substream(seed, channel), rate)
    return stream.take_until(duration)


class _DetectorState:
    """Carryable dead-time/afterpulse filter state for windowed runs."""

    def __init__(self, params: DetectorParams, seed: SimSeed):
        self.params = params
        self.tau_dead = params.dead_time
        self.last_accept = -1e300
        self.pend = np.empty(512)
        self.n_pend = 0
        if params.afterpulse_prob > 0:
            self._uni = UniformStream(substream(seed, CH_AFTERPULSE))
        else:
            self._uni = None
        self._ubuf = np.empty(0)
        self._upos = 0

    def _ensure_uniforms(self, n_needed: int):
        avail = self._ubuf.shape[0] - self._upos
        if avail < n_needed:
            fresh = self._uni.take(max(n_needed - avail, 4096))
            self._ubuf = np.concatenate([self._ubuf[self._upos:], fresh])
            self._upos = 0

    def process(self, cand_t: np.ndarray, cand_f: np.ndarray, t_end: float):
        """Filter one window of merged candidates; returns (times, flags)."""
        p = self.params
        out_times, out_flags = [], []
        if p.afterpulse_prob > 0:
            self._ensure_uniforms(2 * (cand_t.shape[0] + self.n_pend) + 256)
        while True:
            out_t = np.empty(cand_t.shape[0] + 1024)
            out_f = np.empty(out_t.shape[0], dtype=np.uint8)
            (i, n_out, self._upos, self.last_accept,
             self.n_pend, status) = _kernels.detect_window(
                cand_t, cand_f, t_end, self.tau_dead,
                p.afterpulse_prob, p.trap_lifetime,
                self._ubuf, self._upos, self.last_accept,
                self.pend, self.n_pend, out_t, out_f)
            out_times.append(out_t[:n_out].copy())
            out_flags.append(out_f[:n_out].copy())
            cand_t = cand_t[i:]
            cand_f = cand_f[i:]
            if status == _kernels.DONE:
                break
            if status == _kernels.NEED_UNIFORMS:
                self._ensure_uniforms(8192)
            elif status == _kernels.PEND_OVERFLOW:
                self.pend = np.concatenate([self.pend, np.empty(self.pend.shape[0])])
        if len(out_times) == 1:
            return out_times[0], out_flags[0]
        return np.concatenate(out_times), np.concatenate(out_flags)


def _merge_sorted(t_a, f_a, t_b, f_b):
    if t_a.size == 0:
        return t_b, f_b
    if t_b.size == 0:
        return t_a, f_a
    t = np.concatenate([t_a, t_b])
    f = np.concatenate([f_a, f_b])
    order = np.argsort(t, kind="stable")
    return t[order], f[order]


def apply_detector(photons: np.ndarray, params: DetectorParams, duration: float,
                   seed: SimSeed) -> EventTrace:
    """Run the detector front-end over explicit photon arrival times.

    Dark arrivals are generated internally at ``params.dark_rate``, merged
    with the photons, and the combined stream is filtered by the
    non-paralyzable dead time with afterpulse candidates scheduled after
    accepted detections.  Flags record each surviving event's origin.
    """
    if not duration > 0:
        raise InvalidParameterError("duration must be > 0")
    photons = np.asarray(photons, dtype=np.float64)
    if photons.size and np.any(np.diff(photons) < 0):
        raise InvalidParameterError("photon timestamps must be sorted ascending")
    dark = generate_arrivals(params.dark_rate, duration, seed, channel=CH_DARK) \
        if params.dark_rate > 0 else np.empty(0)
    cand_t, cand_f = _merge_sorted(
        photons, np.full(photons.size, FLAG_PHOTON, dtype=np.uint8),
        dark, np.full(dark.size, FLAG_DARK, dtype=np.uint8))
    state = _DetectorState(params, seed)
    times, flags = state.process(cand_t, cand_f, duration)
    return EventTrace(times, duration, flags)


def _levels_for(trace: EventTrace, t_r: float, t_f: float) -> np.ndarray:
    return _kernels.ramp_levels(trace.timestamps, 0.0, 0.0, 0, t_r, t_f)


def _eval_wave(t, times, levels, carry_time, carry_level, carry_count,
               t_r, t_f):
    """Waveform value at times ``t`` (pre-clamp), plus validity mask.

    ``times``/``levels`` are the governing window's events; carry_* give
    the last event before the window.  Returns (v, has_event) where v must
    still be clamped to [0, 1] for amplitude queries; for threshold
    comparisons the raw value is equivalent."""
    t = np.asarray(t, dtype=np.float64)
    if times.size:
        idx = np.searchsorted(times, t, side="right") - 1
        safe = np.maximum(idx, 0)
        e = np.where(idx >= 0, times[safe], carry_time)
        y = np.where(idx >= 0, levels[safe], carry_level)
        g = np.where(idx >= 0, carry_count + idx, carry_count - 1)
    else:
        e = np.full(t.shape, carry_time)
        y = np.full(t.shape, carry_level)
        g = np.full(t.shape, carry_count - 1, dtype=np.int64)
    has_event = g >= 0
    elapsed = t - e
    if t_r > 0:
        v_r = y + elapsed / t_r
    else:
        v_r = np.full(t.shape, np.inf)
    if t_f > 0:
        v_f = y - elapsed / t_f
    else:
        v_f = np.full(t.shape, -np.inf)
    rising = (g % 2) == 0
    v = np.where(rising, v_r, v_f)
    return v, has_event


def rts_value_at(trace: EventTrace, t_r: float, t_f: float, t):
    """Waveform amplitude in [0, 1] at time(s) ``t``.

    The flip-flop output starts at 0, flips its target at every detection,
    and slews linearly with full-swing durations t_r (rising) and t_f
    (falling), resuming from its current level when interrupted.
    """
    if t_r < 0 or t_f < 0 or not t_r + t_f > 0:
        raise InvalidParameterError("edge times must be >= 0 with t_r + t_f > 0")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > trace.duration):
        raise InvalidParameterError("query time outside [0, duration]")
    levels = _levels_for(trace, t_r, t_f)
    v, has_event = _eval_wave(t_arr, trace.timestamps, levels, 0.0, 0.0, 0, t_r, t_f)
    v = np.clip(np.where(has_event, v, 0.0), 0.0, 1.0)
    if np.isscalar(t) or t_arr.ndim == 0:
        return float(v)
    return v


def sample_bits(trace: EventTrace, t_r: float, t_f: float, f_bg: float,
                eta: float, phase: float = 0.0,
                provenance: dict | None = None) -> BitStream:
    """Sample the waveform at phase + k/f_bg; bit k = 1 iff value > eta.

    The comparison is strict, so a sample landing exactly on the threshold
    reads 0.  The number of bits is floor((duration - phase) * f_bg) + 1.
    """
    if not f_bg > 0:
        raise InvalidParameterError("f_bg must be > 0")
    if not 0 < eta < 1:
        raise InvalidParameterError("eta must lie strictly inside (0, 1)")
    if not 0 <= phase < 1.0 / f_bg:
        raise InvalidParameterError("phase must lie in [0, 1/f_bg)")
    n = int(math.floor((trace.duration - phase) * f_bg)) + 1
    levels = _levels_for(trace, t_r, t_f)
    bits = np.empty(n, dtype=np.uint8)
    for start in range(0, n, _SAMPLES_PER_WINDOW):
        stop = min(start + _SAMPLES_PER_WINDOW, n)
        t_s = phase + np.arange(start, stop, dtype=np.float64) / f_bg
        v, has_event = _eval_wave(t_s, trace.timestamps, levels, 0.0, 0.0, 0, t_r, t_f)
        bits[start:stop] = (has_event & (v > eta)).astype(np.uint8)
    return BitStream.from_bits(bits, f_bg, provenance or {})


def simulate_qrff(config: QrffSimConfig, seed: SimSeed) -> BitStream:
    """Full chain simulation: arrivals -> detector -> waveform -> bits.

    Equivalent to generate_arrivals / apply_detector / sample_bits run over
    the whole timeline at once, but evaluated in fixed-size sample windows
    with carried state so memory stays flat.  The provenance records the
    config, the seed, and the realized detection rate (detections divided
    by the simulated duration).
    """
    warmup = config.effective_warmup()
    n = config.n_bits
    t_first = warmup + config.phase
    duration = t_first + (n - 1) / config.f_bg if n > 0 else max(warmup, 1.0 / config.f_bg)

    if config.lambda_d is not None:
        photon = PoissonStream(substream(seed, CH_PHOTON), config.lambda_d)
        dark = None
        det_state = None
    else:
        photon = PoissonStream(substream(seed, CH_PHOTON), config.detector.photon_rate)
        dark = PoissonStream(substream(seed, CH_DARK), config.detector.dark_rate) \
            if config.detector.dark_rate > 0 else None
        det_state = _DetectorState(config.detector, seed)

    bits = np.empty(n, dtype=np.uint8)
    carry_time, carry_level, carry_count = 0.0, 0.0, 0
    n_detections = 0
    t_r, t_f, eta = config.t_r, config.t_f, config.eta

    # Warm-up window: advance detector/waveform state to just before the
    # first sample without emitting bits.
    windows = []
    if n > 0:
        eps = 0.5 / config.f_bg
        if t_first > 0:
            windows.append((0, 0, t_first - eps))
        for start in range(0, n, _SAMPLES_PER_WINDOW):
            stop = min(start + _SAMPLES_PER_WINDOW, n)
            windows.append((start, stop, t_first + (stop - 1) / config.f_bg))
    else:
        windows.append((0, 0, duration))

    for start, stop, t_end in windows:
        cand_t = photon.take_until(t_end)
        if det_state is not None:
            cand_f = np.full(cand_t.size, FLAG_PHOTON, dtype=np.uint8)
            if dark is not None:
                d_t = dark.take_until(t_end)
                cand_t, cand_f = _merge_sorted(
                    cand_t, cand_f, d_t, np.full(d_t.size, FLAG_DARK, dtype=np.uint8))
            ev_t, _ = det_state.process(cand_t, cand_f, t_end)
        else:
            ev_t = cand_t
        levels = _kernels.ramp_levels(ev_t, carry_time, carry_level, carry_count, t_r, t_f)
        n_detections += ev_t.size
        if stop > start:
            t_s = t_first + np.arange(start, stop, dtype=np.float64) / config.f_bg
            v, has_event = _eval_wave(
                t_s, ev_t, levels, carry_time, carry_level, carry_count, t_r, t_f)
            bits[start:stop] = (has_event & (v > eta)).astype(np.uint8)
        if ev_t.size:
            carry_time = float(ev_t[-1])
            carry_level = float(levels[-1])
            carry_count += ev_t.size

    realized = n_detections / duration if duration > 0 else 0.0
    prov = {
        "config": config.to_dict(),
        "seed": seed.seed,
        "stream_id": seed.stream_id,
        "realized_lambda_d": realized,
        "n_detections": n_detections,
        "duration": duration,
    }
    return BitStream.from_bits(bits, config.f_bg, prov)


def inter_arrival_histogram(trace: EventTrace, bin_width: float,
                            max_delay: float) -> Histogram:
    """Histogram of consecutive-detection gaps over [0, max_delay]."""
    if not bin_width > 0:
        raise InvalidParameterError("bin_width must be > 0")
    if not max_delay > bin_width:
        raise InvalidParameterError("max_delay must exceed bin_width")
    n_bins = int(math.ceil(max_delay / bin_width))
    edges = np.arange(n_bins + 1, dtype=np.float64) * bin_width
    if len(trace) > 1:
        gaps = np.diff(trace.timestamps)
        counts, _ = np.histogram(gaps, bins=edges)
    else:
        counts = np.zeros(n_bins, dtype=np.int64)
    return Histogram(edges, counts.astype(np.int64), len(trace))


def _fit_exponential_tail(centers, counts, fit_from: float):
    """Weighted log-linear fit of C*exp(slope*t) over bins beyond fit_from."""
    fit_mask = (centers >= fit_from) & (counts > 0)
    if np.count_nonzero(fit_mask) < 2:
        raise FitFailureError("not enough populated tail bins beyond the trap region")
    x = centers[fit_mask]
    y = np.log(counts[fit_mask])
    w = counts[fit_mask]
    wx = np.sum(w * x) / np.sum(w)
    wy = np.sum(w * y) / np.sum(w)
    denom = np.sum(w * (x - wx) ** 2)
    slope = np.sum(w * (x - wx) * (y - wy)) / denom if denom > 0 else 0.0
    intercept = wy - slope * wx
    return np.exp(intercept + slope * centers)


def estimate_afterpulsing(hist: Histogram, dead_time: float) -> float:
    """Afterpulse probability per detection from an inter-arrival histogram.

    The long-delay tail of the histogram is fit to the exponential
    C*exp(-lam*t) expected of uncorrelated arrivals; counts above that
    baseline at short delays are attributed to afterpulses.  The trap
    lifetime is estimated from the first moment of the (unclipped) excess,
    the baseline refit beyond ten lifetimes, and the release delays hidden
    inside the dead time or beyond the excess window are restored
    analytically from the fitted exponential decay.  ``max_delay`` of the
    histogram should span at least ~20 trap lifetimes.
    """
    if hist.n_events == 0:
        raise FitFailureError("empty trace")
    centers = hist.centers
    counts = hist.counts.astype(np.float64)
    t_half = centers[-1] / 2

    # First pass: baseline from the upper half, trap scale from the excess
    # moment (unclipped residuals keep the moment unbiased under noise).
    baseline = _fit_exponential_tail(centers, counts, t_half)
    short = (centers >= dead_time) & (centers < t_half)
    resid = counts[short] - baseline[short]
    total = float(resid.sum())
    if total <= 0:
        return 0.0
    tau_hat = float(np.sum(resid * (centers[short] - dead_time)) / total)
    lo, hi = hist.bin_width / 2, (t_half - dead_time) / 4
    tau_hat = min(max(tau_hat, lo), hi)

    # Second pass: baseline strictly beyond ten lifetimes, excess summed
    # over eight lifetimes so distant baseline noise stays out.
    fit_from = max(t_half, dead_time + 10.0 * tau_hat)
    baseline = _fit_exponential_tail(centers, counts, fit_from)
    w_end = min(dead_time + 8.0 * tau_hat, t_half)
    window = (centers >= dead_time) & (centers < w_end)
    resid = counts[window] - baseline[window]
    total = float(resid.sum())
    if total <= 0:
        return 0.0
    tau_hat = float(np.sum(resid * (centers[window] - dead_time)) / total)
    tau_hat = min(max(tau_hat, lo), hi)
    visible = math.exp(-dead_time / tau_hat) - math.exp(-w_end / tau_hat)
    if visible <= 0:
        raise FitFailureError("degenerate visibility window")
    return total / visible / hist.n_events


@dataclass(frozen=True)
class CalibrationStep:
    eta: float
    bias: float
    sigma: float
    n_bits: int


@dataclass(frozen=True)
class CalibrationResult:
    eta_hat: float
    converged: bool
    target_sigma: float
    steps: tuple

    @property
    def iterations(self) -> int:
        return len(self.steps)


def calibrate_threshold(base: QrffSimConfig, target_sigma: float, seed: SimSeed,
                        n_start: int = 1 << 17, n_max: int = 1 << 25,
                        max_iter: int = 60) -> CalibrationResult:
    """Find the sampling threshold that nulls the measured bias.

    Bisects on eta using fresh simulation substreams per evaluation.  The
    measured bias decreases in eta, so the bracket endpoints near 0 and 1
    must produce opposite signs; otherwise NoBracketError is raised.  A
    bisection step is only taken when the sign is resolved at 3 sigma;
    otherwise the per-evaluation sample count is quadrupled.  Convergence
    is declared when |measured bias| + 3 sigma < target_sigma, which bounds
    the residual true bias by target_sigma.
    """
    if not target_sigma > 0:
        raise InvalidParameterError("target_sigma must be > 0")
    if target_sigma <= 3 * 0.5 / math.sqrt(n_max):
        raise InvalidParameterError(
            "target_sigma unattainable: need target_sigma > 3/(2*sqrt(n_max))")

    from dataclasses import replace

    counter = [0]

    def measure(eta: float, n: int) -> CalibrationStep:
        cfg = replace(base, eta=eta, n_bits=n)
        counter[0] += 1
        # distinct substream per evaluation under the same root seed
        eval_id = ((seed.stream_id << 20) + counter[0]) % (2 ** 64)
        bs = simulate_qrff(cfg, SimSeed(seed.seed, eval_id))
        b = bs.ones() / n - 0.5
        return CalibrationStep(eta, b, 0.5 / math.sqrt(n), n)

    def measure_resolved(eta: float, n: int) -> CalibrationStep:
        # escalate the sample count until the sign is 3-sigma confident
        st = measure(eta, n)
        while abs(st.bias) <= 3 * st.sigma and st.n_bits < n_max:
            st = measure(eta, min(st.n_bits * 4, n_max))
        return st

    steps = []
    lo_eta, hi_eta = 1e-4, 1.0 - 1e-4
    n = n_start
    s_lo = measure_resolved(lo_eta, n)
    s_hi = measure_resolved(hi_eta, n)
    steps += [s_lo, s_hi]
    lo_confident = s_lo.bias > 3 * s_lo.sigma
    hi_confident = s_hi.bias < -3 * s_hi.sigma
    if not (lo_confident and hi_confident):
        raise NoBracketError(
            f"bias does not change sign over (0, 1): b({lo_eta:.4g})={s_lo.bias:.3g}"
            f"+-{s_lo.sigma:.2g}, b({hi_eta:.4g})={s_hi.bias:.3g}+-{s_hi.sigma:.2g}")

    eta_mid = 0.5 * (lo_eta + hi_eta)
    for _ in range(max_iter):
        eta_mid = 0.5 * (lo_eta + hi_eta)
        st = measure(eta_mid, n)
        steps.append(st)
        if abs(st.bias) + 3 * st.sigma < target_sigma:
            return CalibrationResult(eta_mid, True, target_sigma, tuple(steps))
        if abs(st.bias) > 3 * st.sigma:
            if st.bias > 0:
                lo_eta = eta_mid
            else:
                hi_eta = eta_mid
        elif n < n_max:
            n = min(n * 4, n_max)
        else:
            # cannot resolve further; fall back to narrowing the bracket
            if st.bias > 0:
                lo_eta = eta_mid
            else:
                hi_eta = eta_mid
    return CalibrationResult(eta_mid, False, target_sigma, tuple(steps))
