"""Array-scale simulation: process variation, sweeps, readout.

Scales the single-generator engine to a two-sub-array sensor: per-pixel
parameters are drawn from configured distributions (breakdown voltage,
dark rate with hot-pixel outliers, edge mismatch, comparator offset), each
pixel runs on its own counter-based substream so results are independent
of every other pixel and of worker count, and the serialized readout
interleaves fixed groups of pixels onto channels frame by frame.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameterError
from .estimators import estimate_autocorr, estimate_bias
from .eventsim import BitStream, DetectorParams, QrffSimConfig, simulate_qrff
from .rng import CH_PARAMS, SimSeed, substream

SPATIAL_METRICS = ("bias", "a1", "count_rate", "dcr")


@dataclass(frozen=True)
class PixelVariation:
    """Distributions from which per-pixel deviations are drawn.

    Breakdown voltages are Gaussian(breakdown_mean, breakdown_sigma) volts;
    dark rates are log-normal with the given median and log-space sigma,
    with a ``hot_fraction`` of pixels multiplied by ``hot_multiplier``;
    edge times get Gaussian jitter of ``edge_sigma`` seconds; the sampling
    threshold gets a Gaussian comparator offset of ``eta_sigma``.  All
    sigmas zero gives a perfectly uniform array.
    """

    breakdown_mean: float = 32.5
    breakdown_sigma: float = 0.0
    dcr_median: float = 200.0
    dcr_sigma: float = 0.0
    hot_fraction: float = 0.0
    hot_multiplier: float = 100.0
    edge_sigma: float = 0.0
    eta_sigma: float = 0.0

    def __post_init__(self):
        if self.breakdown_mean <= 0 or self.breakdown_sigma < 0:
            raise InvalidParameterError("breakdown distribution must be positive")
        if self.dcr_median < 0 or self.dcr_sigma < 0:
            raise InvalidParameterError("dark-rate distribution must be non-negative")
        if not 0 <= self.hot_fraction <= 0.05:
            raise InvalidParameterError("hot_fraction must lie in [0, 0.05]")
        if self.hot_multiplier < 1:
            raise InvalidParameterError("hot_multiplier must be >= 1")
        if self.edge_sigma < 0 or self.eta_sigma < 0:
            raise InvalidParameterError("sigmas must be >= 0")


@dataclass(frozen=True)
class ArrayConfig:
    """Geometry, operating point and circuit parameters of one sub-array."""

    rows: int
    cols: int
    v_op: float = 33.3
    i_led: float = 2.0
    eta_global: float = 0.5
    f_bg: float = 5e6
    serializer_ratio: int = 70
    led_coupling: float = 2e7  # photons/s per mA of LED current
    t_r: float = 100e-12
    t_f: float = 100e-12
    dead_time_hold: float = 4e-9
    dead_time_recharge: float = 4e-9
    afterpulse_prob: float = 0.0
    trap_lifetime: float = 25e-9
    name: str = "custom"

    _SUB_ARRAYS = {"A1": (70, 32), "A2": (70, 8)}

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidParameterError("geometry must be at least 1x1")
        if self.name in self._SUB_ARRAYS and (self.rows, self.cols) != self._SUB_ARRAYS[self.name]:
            raise InvalidParameterError(
                f"sub-array {self.name} must be "
                f"{self._SUB_ARRAYS[self.name][0]}x{self._SUB_ARRAYS[self.name][1]}")
        if self.serializer_ratio < 1:
            raise InvalidParameterError("serializer_ratio must be >= 1")
        if self.i_led < 0 or self.led_coupling <= 0:
            raise InvalidParameterError("LED parameters must be non-negative")
        if not self.f_bg > 0:
            raise InvalidParameterError("f_bg must be > 0")

    @classmethod
    def a1(cls, **kw) -> "ArrayConfig":
        return cls(rows=70, cols=32, name="A1", **kw)

    @classmethod
    def a2(cls, **kw) -> "ArrayConfig":
        return cls(rows=70, cols=8, name="A2", **kw)

    @property
    def n_pixels(self) -> int:
        return self.rows * self.cols

    @property
    def photon_rate(self) -> float:
        return self.led_coupling * self.i_led


@dataclass(frozen=True)
class Array:
    """A built array: realized per-pixel parameters under one seed."""

    config: ArrayConfig
    variation: PixelVariation
    seed_entropy: int
    breakdown_v: np.ndarray
    dcr: np.ndarray
    t_r: np.ndarray
    t_f: np.ndarray
    eta: np.ndarray

    @property
    def n_pixels(self) -> int:
        return self.config.n_pixels

    @property
    def active(self) -> np.ndarray:
        """Avalanching pixels: operating voltage above breakdown."""
        return self.config.v_op > self.breakdown_v

    @property
    def eta_stuck(self) -> np.ndarray:
        """Comparator offset pushed the threshold outside (0, 1)."""
        return (self.eta <= 0.0) | (self.eta >= 1.0)

    def pixel_sim_config(self, i: int, n_bits: int) -> Optional[QrffSimConfig]:
        """Simulation config for pixel i, or None when the pixel is stuck."""
        if not self.active[i] or self.eta_stuck[i]:
            return None
        c = self.config
        det = DetectorParams(
            photon_rate=c.photon_rate,
            dark_rate=float(self.dcr[i]),
            dead_time_hold=c.dead_time_hold,
            dead_time_recharge=c.dead_time_recharge,
            afterpulse_prob=c.afterpulse_prob,
            trap_lifetime=c.trap_lifetime,
        )
        return QrffSimConfig(
            f_bg=c.f_bg, eta=float(self.eta[i]),
            t_r=float(self.t_r[i]), t_f=float(self.t_f[i]),
            n_bits=n_bits, detector=det,
        )

    def stuck_value(self, i: int) -> int:
        """Constant output bit of an inactive or threshold-stuck pixel."""
        if self.active[i] and self.eta[i] <= 0.0:
            return 1
        return 0


def build_array(config: ArrayConfig, variation: PixelVariation,
                seed: SimSeed) -> Array:
    """Realize per-pixel parameters; deterministic per (seed, pixel index).

    Each pixel's draws come from its own parameter substream, so a pixel's
    realization never depends on the array size or on other pixels.
    """
    n = config.n_pixels
    bv = np.empty(n)
    dcr = np.empty(n)
    t_r = np.empty(n)
    t_f = np.empty(n)
    eta = np.empty(n)
    v = variation
    for i in range(n):
        rng = substream(SimSeed(seed.seed, i), CH_PARAMS)
        bv[i] = rng.normal(v.breakdown_mean, v.breakdown_sigma) \
            if v.breakdown_sigma > 0 else v.breakdown_mean
        if v.dcr_sigma > 0:
            dcr[i] = v.dcr_median * math.exp(rng.normal(0.0, v.dcr_sigma))
        else:
            dcr[i] = v.dcr_median
        if v.hot_fraction > 0 and rng.random() < v.hot_fraction:
            dcr[i] *= v.hot_multiplier
        if v.edge_sigma > 0:
            t_r[i] = max(config.t_r + rng.normal(0.0, v.edge_sigma), 0.0)
            t_f[i] = max(config.t_f + rng.normal(0.0, v.edge_sigma), 0.0)
        else:
            t_r[i], t_f[i] = config.t_r, config.t_f
        eta[i] = config.eta_global + (rng.normal(0.0, v.eta_sigma) if v.eta_sigma > 0 else 0.0)
    return Array(config, variation, seed.seed, bv, dcr, t_r, t_f, eta)


@dataclass(frozen=True)
class ArrayResult:
    array: Array
    n_bits: int
    mode: str
    streams: tuple = ()
    count_rates: Optional[np.ndarray] = None
    realized_lambda: Optional[np.ndarray] = None


def _simulate_pixel(array: Array, i: int, n_bits: int, seed: SimSeed) -> tuple:
    cfg = array.pixel_sim_config(i, n_bits)
    if cfg is None:
        bits = np.full(n_bits, array.stuck_value(i), dtype=np.uint8)
        bs = BitStream.from_bits(bits, array.config.f_bg,
                                 {"pixel": i, "stuck": True, "realized_lambda_d": 0.0})
        return bs, 0.0
    bs = simulate_qrff(cfg, SimSeed(seed.seed, i))
    bs.provenance["pixel"] = i
    return bs, bs.provenance["realized_lambda_d"]


def _count_pixel(array: Array, i: int, duration: float, seed: SimSeed) -> float:
    cfg = array.pixel_sim_config(i, 0)
    if cfg is None:
        return 0.0
    # count-bypass mode: events only, no flip-flop sampling
    cfg = replace(cfg, n_bits=0, warmup=duration)
    bs = simulate_qrff(cfg, SimSeed(seed.seed, i))
    return bs.provenance["n_detections"] / duration


def simulate_array(array: Array, n_bits: int, seed: SimSeed,
                   threads: int = 1, mode: str = "bits") -> ArrayResult:
    """Simulate every pixel on its own substream, frame-aligned.

    mode="bits" returns per-pixel BitStreams; mode="counts" bypasses the
    flip-flop and returns per-pixel detection rates over the same span.
    """
    if mode not in ("bits", "counts"):
        raise InvalidParameterError("mode must be 'bits' or 'counts'")
    n_pix = array.n_pixels
    if mode == "counts":
        duration = n_bits / array.config.f_bg
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                rates = list(ex.map(
                    lambda i: _count_pixel(array, i, duration, seed), range(n_pix)))
        else:
            rates = [_count_pixel(array, i, duration, seed) for i in range(n_pix)]
        return ArrayResult(array, n_bits, mode, count_rates=np.array(rates))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(
                lambda i: _simulate_pixel(array, i, n_bits, seed), range(n_pix)))
    else:
        results = [_simulate_pixel(array, i, n_bits, seed) for i in range(n_pix)]
    streams = tuple(r[0] for r in results)
    lam = np.array([r[1] for r in results])
    return ArrayResult(array, n_bits, mode, streams=streams, realized_lambda=lam)


@dataclass(frozen=True)
class SpatialMap:
    """Per-pixel metric values on the array grid."""

    metric: str
    values: np.ndarray  # shape (rows, cols), NaN where undefined
    rows: int
    cols: int

    @property
    def max_abs(self) -> float:
        v = self.values[np.isfinite(self.values)]
        return float(np.max(np.abs(v))) if v.size else math.nan

    @property
    def rms(self) -> float:
        v = self.values[np.isfinite(self.values)]
        return float(np.sqrt(np.mean(v ** 2))) if v.size else math.nan

    def to_csv(self) -> str:
        lines = [f"row,col,{self.metric}"]
        for r in range(self.rows):
            for c in range(self.cols):
                lines.append(f"{r},{c},{self.values[r, c]!r}")
        return "\n".join(lines) + "\n"


def spatial_map(result: ArrayResult, metric: str) -> SpatialMap:
    """Apply the per-pixel estimator for ``metric`` and grid the values."""
    if metric not in SPATIAL_METRICS:
        raise InvalidParameterError(f"metric must be one of {SPATIAL_METRICS}")
    cfg = result.array.config
    n_pix = result.array.n_pixels
    vals = np.full(n_pix, np.nan)
    if metric == "dcr":
        vals = result.array.dcr.copy()
    elif metric == "count_rate":
        if result.mode == "counts":
            vals = result.count_rates.copy()
        else:
            vals = result.realized_lambda.copy()
    else:
        for i, bs in enumerate(result.streams):
            if metric == "bias":
                vals[i] = estimate_bias(bs).b_hat
            else:
                bits = bs.bits()
                ones = int(np.count_nonzero(bits))
                if ones == 0 or ones == bits.size:
                    vals[i] = np.nan  # constant stream: correlation undefined
                else:
                    vals[i] = estimate_autocorr(bits, 1)[0].a_hat
    return SpatialMap(metric, vals.reshape(cfg.rows, cfg.cols), cfg.rows, cfg.cols)


SWEEP_PARAMETERS = ("eta_global", "i_led", "v_op", "f_bg")


@dataclass(frozen=True)
class SweepRow:
    value: float
    mean_bias: float
    rms_bias: float
    mean_a1: float
    rms_a1: float
    mean_rate: float
    n_stuck: int


@dataclass(frozen=True)
class SweepReport:
    parameter: str
    n_bits: int
    rows: tuple

    def to_csv(self) -> str:
        lines = [f"{self.parameter},mean_bias,rms_bias,mean_a1,rms_a1,mean_rate,n_stuck"]
        for r in self.rows:
            lines.append(
                f"{r.value!r},{r.mean_bias!r},{r.rms_bias!r},"
                f"{r.mean_a1!r},{r.rms_a1!r},{r.mean_rate!r},{r.n_stuck}")
        return "\n".join(lines) + "\n"


def sweep(config: ArrayConfig, variation: PixelVariation, parameter: str,
          values: Sequence[float], n_bits: int, seed: SimSeed,
          threads: int = 1) -> SweepReport:
    """Simulate the array at each parameter value; summarize bias and a1.

    Per value the array is re-instantiated from the same seed, so the
    process-variation draws are common across the sweep and only the swept
    operating parameter changes.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise InvalidParameterError(f"parameter must be one of {SWEEP_PARAMETERS}")
    if len(values) == 0:
        raise InvalidParameterError("sweep needs at least one value")
    rows = []
    for val in values:
        cfg = replace(config, **{parameter: float(val)})
        arr = build_array(cfg, variation, seed)
        res = simulate_array(arr, n_bits, seed, threads=threads)
        bias = np.array([estimate_bias(bs).b_hat for bs in res.streams])
        a1 = spatial_map(res, "a1").values.ravel()
        fin = np.isfinite(a1)
        rows.append(SweepRow(
            value=float(val),
            mean_bias=float(np.mean(bias)),
            rms_bias=float(np.sqrt(np.mean(bias ** 2))),
            mean_a1=float(np.mean(a1[fin])) if fin.any() else math.nan,
            rms_a1=float(np.sqrt(np.mean(a1[fin] ** 2))) if fin.any() else math.nan,
            mean_rate=float(np.mean(res.realized_lambda)),
            n_stuck=int(np.count_nonzero(~fin)),
        ))
    return SweepReport(parameter, n_bits, tuple(rows))


def serialize_readout(streams: Sequence, ratio: int) -> list[np.ndarray]:
    """Interleave groups of ``ratio`` pixel streams onto channels.

    Channel c carries pixels [c*ratio, (c+1)*ratio) in frame order: one bit
    from each pixel per frame, pixels in index order.  Exact inverse of
    ``deserialize_readout``.
    """
    arrays = [s.bits() if isinstance(s, BitStream) else np.asarray(s, dtype=np.uint8)
              for s in streams]
    n_pix = len(arrays)
    if n_pix == 0 or n_pix % ratio != 0:
        raise InvalidParameterError("pixel count must be a positive multiple of ratio")
    n = arrays[0].size
    if any(a.size != n for a in arrays):
        raise InvalidParameterError("all pixel streams must have equal length")
    channels = []
    for c in range(n_pix // ratio):
        group = np.stack(arrays[c * ratio:(c + 1) * ratio])  # (ratio, n)
        channels.append(np.ascontiguousarray(group.T).reshape(-1))
    return channels


def deserialize_readout(channel: np.ndarray, ratio: int) -> list[np.ndarray]:
    """Split one serialized channel back into its per-pixel streams."""
    ch = np.asarray(channel, dtype=np.uint8)
    if ratio < 1 or ch.size % ratio != 0:
        raise InvalidParameterError("channel length must be a multiple of ratio")
    frames = ch.reshape(-1, ratio)
    return [frames[:, p].copy() for p in range(ratio)]


DEFAULT_TRAINING_PATTERN = np.array([1, 0, 1, 1, 0, 0, 1, 0], dtype=np.uint8)


def pattern_training_frame(pattern=None, ratio: int = 70) -> np.ndarray:
    """Serialized channel content when every pixel emits a known pattern.

    Used by a consumer to align its deserializer: all ``ratio`` pixels play
    the same pattern, one bit per frame.
    """
    pat = DEFAULT_TRAINING_PATTERN if pattern is None else np.asarray(pattern, dtype=np.uint8)
    if pat.size == 0:
        raise InvalidParameterError("pattern must be nonempty")
    return serialize_readout([pat] * ratio, ratio)[0]


def verify_alignment(channel: np.ndarray, pattern=None, ratio: int = 70) -> bool:
    """True when a received channel matches the expected training frames."""
    expected = pattern_training_frame(pattern, ratio)
    ch = np.asarray(channel, dtype=np.uint8)
    return ch.size == expected.size and bool(np.array_equal(ch, expected))
