"""Velocity-selective Raman stripe magnetometry simulator.

Simulates two-photon velocity selection in a released cold-atom cloud
under a DC magnetic field, synthesizes time-of-flight images, and
recovers the field from the stripe features (fits, current scans,
sideband calibration, Faraday cross-check, automated nulling).
"""

__version__ = "0.1.0"

from .analysis import (
    CalibrationResult,
    ScanFitResult,
    StripeFitResult,
    calibrate_with_sidebands,
    contrast,
    fit_hyperbola,
    fit_stripe_pair,
    fit_stripe_timing,
    fit_stripes_zero_area,
    separation_to_field,
)
from .config import AnalysisConfig, ExperimentConfig, FaradayConfig, load_config
from .ensemble import ConfigError, Ensemble, EnsembleConfig, sample_ensemble
from .faraday import FaradayTrace, extract_frequency, synthesize_trace
from .fitting import FitFailedError, FitResult, levenberg_marquardt
from .imaging import (
    Frame,
    ImagingConfig,
    Profile,
    cross_section,
    difference_frame,
    propagate,
    run_sequence,
)
from .model import (
    RB85,
    AtomSpecies,
    CoilModel,
    FieldVector,
    field_at,
    larmor_frequency,
    resonant_velocity,
)
from .pipeline import (
    FieldMeasurement,
    NullResult,
    ScanResult,
    auto_null,
    measure_field,
    run_calibration,
    scan_axis,
    simulate_pair,
    timing_sweep,
)
from .raman import PulseConfig, apply_pulse, assign_channels, channel_weights, transfer_probability, two_photon_detuning
