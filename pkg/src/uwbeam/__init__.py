"""
Angle-based transmit beamforming for single-carrier underwater acoustic
downlinks: beam design, multipath Doppler channel, adaptive receiver and
evaluation harness.
"""

__version__ = "0.1.0"

from .exceptions import (
    DivergenceError,
    InvalidArgumentError,
    InvalidPolynomialError,
    OutOfBoundsError,
    SingularDesignError,
    StageError,
    SyncFailureError,
    TruncatedFrameError,
    UwbeamError,
)
from .dsp import (
    ComplexBasebandSignal,
    MSequenceSpec,
    PulseSpec,
    add_awgn,
    dft,
    generate_mseq,
    idft,
    linear_interpolate,
    pulse_shape,
    raised_cosine_taps,
)
from .beamformer import (
    ArrayGeometry,
    BeamWeights,
    TransmitBeamformer,
    apply_transmit_beamforming,
    beam_pattern,
    design_null_steering,
    design_single_beam,
    incremental_delay,
    steering_vector,
    synthesize_time_filters,
)
from .channel import (
    ChannelSpec,
    DriftLaw,
    PathSpec,
    element_path_params,
    interference_decomposition,
    propagate,
    propagate_beamformed,
)
from .receiver import (
    DecisionFeedbackEqualizer,
    EqualizerConfig,
    adapt,
    coarse_resample,
    decision,
    dfe_run,
    pll_update,
    synchronize,
)
from .angle import (
    DelayAngleMap,
    PrincipalAngleEstimator,
    delay_angle_map,
    estimate_element_channels,
    principal_angle,
)
from .metrics import FrameMetrics, MonteCarloResult, compute_frame_mse
from .config import ExperimentConfig, load_config
from .experiment import emit_results, run_monte_carlo, run_single_link, run_two_user

__all__ = [
    "__version__",
    "DivergenceError",
    "InvalidArgumentError",
    "InvalidPolynomialError",
    "OutOfBoundsError",
    "SingularDesignError",
    "StageError",
    "SyncFailureError",
    "TruncatedFrameError",
    "UwbeamError",
    "ComplexBasebandSignal",
    "MSequenceSpec",
    "PulseSpec",
    "add_awgn",
    "dft",
    "generate_mseq",
    "idft",
    "linear_interpolate",
    "pulse_shape",
    "raised_cosine_taps",
    "ArrayGeometry",
    "BeamWeights",
    "TransmitBeamformer",
    "apply_transmit_beamforming",
    "beam_pattern",
    "design_null_steering",
    "design_single_beam",
    "incremental_delay",
    "steering_vector",
    "synthesize_time_filters",
    "ChannelSpec",
    "DriftLaw",
    "PathSpec",
    "element_path_params",
    "interference_decomposition",
    "propagate",
    "propagate_beamformed",
    "DecisionFeedbackEqualizer",
    "EqualizerConfig",
    "adapt",
    "coarse_resample",
    "decision",
    "dfe_run",
    "pll_update",
    "synchronize",
    "DelayAngleMap",
    "PrincipalAngleEstimator",
    "delay_angle_map",
    "estimate_element_channels",
    "principal_angle",
    "FrameMetrics",
    "MonteCarloResult",
    "compute_frame_mse",
    "ExperimentConfig",
    "load_config",
    "emit_results",
    "run_monte_carlo",
    "run_single_link",
    "run_two_user",
]
