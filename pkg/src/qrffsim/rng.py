"""Reproducible random-number plumbing.

All stochastic code in the package draws from counter-based Philox
generators keyed by a ``SimSeed``.  Distinct ``(seed, stream_id)`` pairs
give statistically independent substreams, and within one substream a
``channel`` index separates independent purposes (photon gaps, dark gaps,
afterpulse decisions, parameter draws) so that consuming one channel never
perturbs another.

Exponential variates are produced from uniforms via the inverse CDF,
``gap = -log(1 - u) / rate``, rather than a ziggurat method.  Inverse-CDF
draws consume exactly one uniform each, which makes every stream invariant
to how the draws are batched -- the property that lets windowed simulation
reproduce one-shot simulation bit-exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

_U64 = 2**64

# Channel indices within one (seed, stream_id) substream.
CH_PHOTON = 0
CH_DARK = 1
CH_AFTERPULSE = 2
CH_PARAMS = 3
CH_CALIBRATION = 4


@dataclass(frozen=True)
class SimSeed:
    """Root seed plus a per-pixel substream selector."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < _U64):
            raise InvalidParameterError("seed must be an unsigned 64-bit integer")
        if not (0 <= self.stream_id < _U64):
            raise InvalidParameterError("stream_id must be an unsigned 64-bit integer")

    def pixel(self, index: int) -> "SimSeed":
        """Substream for pixel ``index`` under this root seed."""
        return SimSeed(self.seed, index)


def substream(sim_seed: SimSeed, channel: int) -> np.random.Generator:
    """Philox generator for one purpose-channel of one substream."""
    ss = np.random.SeedSequence(
        entropy=sim_seed.seed, spawn_key=(sim_seed.stream_id, channel)
    )
    return np.random.Generator(np.random.Philox(ss))


def exponential_gaps(rng: np.random.Generator, rate: float, n: int) -> np.ndarray:
    """``n`` i.i.d. exponential inter-arrival gaps with mean ``1/rate``.

    Inverse-CDF transform of uniforms on [0, 1); one uniform per gap.
    """
    u = rng.random(n)
    return -np.log1p(-u) / rate


class PoissonStream:
    """Incremental homogeneous Poisson arrival stream.

    Yields arrival times in windows while keeping the underlying uniform
    stream strictly sequential, so the realized process is identical no
    matter how the timeline is partitioned.
    """

    _BLOCK = 1 << 16

    def __init__(self, rng: np.random.Generator, rate: float):
        if rate < 0:
            raise InvalidParameterError("rate must be >= 0")
        self._rng = rng
        self.rate = rate
        self._buf = np.empty(0)
        self._pos = 0
        self._last = 0.0  # time of the most recently drawn arrival

    def _refill(self):
        gaps = exponential_gaps(self._rng, self.rate, self._BLOCK)
        # Left-fold accumulation from the carried time keeps float results
        # identical to a single long cumsum.
        times = np.cumsum(np.concatenate(([self._last], gaps)))[1:]
        self._buf = times
        self._pos = 0
        self._last = float(times[-1])

    def take_until(self, t_end: float) -> np.ndarray:
        """All not-yet-consumed arrivals with time <= t_end, in order."""
        if self.rate == 0.0:
            return np.empty(0)
        out = []
        while True:
            if self._pos >= self._buf.shape[0]:
                self._refill()
            chunk = self._buf[self._pos:]
            k = int(np.searchsorted(chunk, t_end, side="right"))
            out.append(chunk[:k])
            self._pos += k
            if k < chunk.shape[0]:
                break
        if len(out) == 1:
            return out[0].copy()
        return np.concatenate(out)


class UniformStream:
    """Sequentially consumed uniform stream with batch-invariant refills."""

    _BLOCK = 1 << 16

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._buf = np.empty(0)
        self._pos = 0

    def take(self, n: int) -> np.ndarray:
        out = np.empty(n)
        filled = 0
        while filled < n:
            if self._pos >= self._buf.shape[0]:
                self._buf = self._rng.random(self._BLOCK)
                self._pos = 0
            avail = self._buf.shape[0] - self._pos
            k = min(avail, n - filled)
            out[filled:filled + k] = self._buf[self._pos:self._pos + k]
            self._pos += k
            filled += k
        return out
