"""Statistical estimators for bit streams and event traces.

Each estimator reports an uncertainty so Monte-Carlo output can be tested
against the closed-form model: bias carries the binomial sigma = 1/(2*sqrt(n)),
lagged correlation the white-noise null sigma = 1/sqrt(n - lag).  All sums
are exact integer accumulations, so chunked or parallel evaluation
reproduces the sequential result bit-exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analytic import binary_shannon_entropy
from .errors import DegenerateVarianceError, InvalidParameterError
from .eventsim import BitStream, EventTrace

_CHUNK = 1 << 24


@dataclass(frozen=True)
class BiasEstimate:
    b_hat: float
    sigma: float
    n: int


@dataclass(frozen=True)
class CorrEstimate:
    lag: int
    a_hat: float
    sigma: float
    n: int


def _as_bits(stream) -> np.ndarray:
    if isinstance(stream, BitStream):
        return stream.bits()
    return np.asarray(stream, dtype=np.uint8)


def estimate_bias(stream) -> BiasEstimate:
    """Ones fraction minus one half, with sigma = 1/(2*sqrt(n))."""
    bits = _as_bits(stream)
    n = bits.size
    if n < 1:
        raise InvalidParameterError("empty stream")
    ones = int(np.count_nonzero(bits))
    return BiasEstimate(ones / n - 0.5, 0.5 / math.sqrt(n), n)


def estimate_autocorr(stream, max_lag: int) -> list[CorrEstimate]:
    """Normalized sample autocovariance of the +/-1-mapped sequence.

    a_hat(i) = sum_k (x_k - m)(x_{k+i} - m) / sum_k (x_k - m)^2 with the
    biased divide-by-n normalization folded into both sums.  Computed from
    integer pair counts, so the result is independent of chunking.
    """
    bits = _as_bits(stream)
    n = bits.size
    if not 1 <= max_lag < n:
        raise InvalidParameterError("need n > max_lag >= 1")
    ones = int(np.count_nonzero(bits))
    if ones == 0 or ones == n:
        raise DegenerateVarianceError("all bits equal; autocorrelation undefined")

    # Everything below is exact integer arithmetic on +/-1 sums; the single
    # float division at the end makes the result invariant under global bit
    # complement and under chunking.
    s_all = 2 * ones - n
    denom = n * (n * n - s_all * s_all)
    out = []
    for lag in range(1, max_lag + 1):
        pairs = 0
        head_ones = 0
        tail_ones = 0
        for start in range(0, n - lag, _CHUNK):
            stop = min(start + _CHUNK, n - lag)
            a = bits[start:stop]
            b = bits[start + lag:stop + lag]
            pairs += int(np.count_nonzero(a & b))
            head_ones += int(np.count_nonzero(a))
            tail_ones += int(np.count_nonzero(b))
        m = n - lag
        sum_xx = 4 * pairs - 2 * head_ones - 2 * tail_ones + m
        s_head = 2 * head_ones - m
        s_tail = 2 * tail_ones - m
        # n^2 * sum (x_k - mean)(x_{k+lag} - mean), exact
        cov = n * n * sum_xx - n * s_all * (s_head + s_tail) + m * s_all * s_all
        out.append(CorrEstimate(lag, cov / denom, 1.0 / math.sqrt(m), n))
    return out


def estimate_entropy(stream) -> float:
    """Shannon entropy of the ones fraction, bits/bit."""
    bits = _as_bits(stream)
    if bits.size < 1:
        raise InvalidParameterError("empty stream")
    return binary_shannon_entropy(int(np.count_nonzero(bits)) / bits.size)


def estimate_count_rate(trace: EventTrace) -> float:
    """Detections per second over the trace duration."""
    if not trace.duration > 0:
        raise InvalidParameterError("duration must be > 0")
    return len(trace) / trace.duration
