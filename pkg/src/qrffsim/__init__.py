"""Event-level simulation and statistics for flip-flop quantum RNGs."""

__version__ = "0.1.0"

from .analytic import (
    ComplianceVerdict,
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
from .arraysim import (
    Array,
    ArrayConfig,
    PixelVariation,
    SpatialMap,
    SweepReport,
    build_array,
    deserialize_readout,
    pattern_training_frame,
    serialize_readout,
    simulate_array,
    spatial_map,
    sweep,
    verify_alignment,
)
from .errors import (
    BitFileError,
    ConfigError,
    DegenerateVarianceError,
    FitFailureError,
    InvalidParameterError,
    NoBracketError,
    QrffError,
)
from .estimators import (
    BiasEstimate,
    CorrEstimate,
    estimate_autocorr,
    estimate_bias,
    estimate_count_rate,
    estimate_entropy,
)
from .eventsim import (
    BitStream,
    CalibrationResult,
    DetectorParams,
    EventTrace,
    Histogram,
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
from .rng import SimSeed, substream
from .stattests import (
    BatteryReport,
    TestResult,
    approximate_entropy_test,
    block_frequency_test,
    cumulative_sums_test,
    dft_test,
    frequency_test,
    longest_run_test,
    min_pass_rate,
    run_battery,
    runs_test,
    serial_test,
)
