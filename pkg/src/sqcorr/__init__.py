"""Covariance and homodyne estimation of squeezing from two-detector records."""

from .gaussian import (
    GaussianState,
    LocalOscillator,
    LossChannel,
    LossMode,
    apply_loss_to_variance,
    rotated_variance,
    theoretical_covariance,
)
from .detection import (
    DetectorModel,
    DigitizerConfig,
    Preset,
    SampleRecord,
    Scenario,
    detected_variance,
    direct_split_scenario,
    expected_moments,
    preset_scenario,
    simulate_record,
)
from .estimators import (
    MeasurementStats,
    MomentAccumulator,
    SnlCalibration,
    SqueezingEstimate,
    calibrate_snl,
    coincidence_moment,
    compute_stats,
    fit_scaling_exponent,
    squeezing_covariance,
    squeezing_homodyne,
    squeezing_lo_free,
)

__version__ = "0.1.0"
