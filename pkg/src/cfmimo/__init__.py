"""Link-level simulator for uplink cell-free massive MIMO detection."""

from .channel import (
    ChannelRealization,
    PilotAssignment,
    PilotBook,
    assign_pilots,
    dft_pilot_book,
    mmse_estimate,
    received_data,
    sample_channel,
    transmit_pilots,
)
from .detectors import (
    DetectionResult,
    DetectorFailure,
    EpState,
    detect_ep,
    detect_ml,
    detect_mmse,
    detect_mmse_sic,
    detect_mrc,
)
from .harness import SweepResult, SweepSpec, emit_csv, emit_plot, read_csv, run_sweep, run_trial
from .metrics import TrialMetrics, ber, se, sinr_ep, sinr_linear
from .modem import Constellation, build_constellation, demodulate_hard, modulate, posterior_moments
from .scenario import (
    Geometry,
    LargeScaleFading,
    SystemConfig,
    load_config,
    pathloss_db,
    place_entities,
    sample_large_scale,
    shadowing_covariance,
    unit_median_ue_power,
)

__all__ = [
    "ChannelRealization",
    "Constellation",
    "DetectionResult",
    "DetectorFailure",
    "EpState",
    "Geometry",
    "LargeScaleFading",
    "PilotAssignment",
    "PilotBook",
    "SweepResult",
    "SweepSpec",
    "SystemConfig",
    "TrialMetrics",
    "assign_pilots",
    "ber",
    "build_constellation",
    "demodulate_hard",
    "detect_ep",
    "detect_ml",
    "detect_mmse",
    "detect_mmse_sic",
    "detect_mrc",
    "dft_pilot_book",
    "emit_csv",
    "emit_plot",
    "load_config",
    "mmse_estimate",
    "modulate",
    "pathloss_db",
    "place_entities",
    "posterior_moments",
    "read_csv",
    "received_data",
    "run_sweep",
    "run_trial",
    "sample_channel",
    "sample_large_scale",
    "se",
    "shadowing_covariance",
    "sinr_ep",
    "sinr_linear",
    "transmit_pilots",
    "unit_median_ue_power",
]
__version__ = "0.1.0"
