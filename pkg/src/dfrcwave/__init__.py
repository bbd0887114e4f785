"""Constant-modulus MIMO waveform design for joint radar sensing and
multiuser downlink communication.

The package designs an ``n_tx x L`` constant-modulus transmit block that
jointly shapes the spatial beam pattern and the space-time auto/cross
correlation sidelobes while keeping every user's received PSK symbol inside
its constructive-interference region.  Two solvers are provided (a
majorization-minimization method with a diagonal majorizer, and a linearized
ADMM for large blocks) together with a radar evaluation harness (echo
synthesis, Capon imaging, CA-CFAR detection).
"""

from .scenario import (
    ArrayGeometry,
    WaveformBlock,
    SceneObject,
    RadarScene,
    BeamPatternSpec,
    CommsConfig,
    Weights,
    steering_vector,
    steering_matrix,
    shift_columns,
    vec_block,
    mat_block,
    generate_rayleigh_channels,
    draw_psk_symbols,
    desired_rect_beam_pattern,
)
from .costs import (
    CostBreakdown,
    CorrelationProfile,
    beam_gain,
    optimal_alpha,
    beam_pattern_mse,
    space_time_correlation,
    correlation_profile,
    autocorrelation_isl,
    crosscorrelation_isl,
    angular_similarity,
    lfm_reference,
    total_objective,
)

__version__ = "0.1.0"
