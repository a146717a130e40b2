"""Simulation and processing chain for a multitone THz channel sounder."""

from .airsim import CaptureSimulator, ChannelTap, ImpairmentConfig, PhaseDrift, simulate_capture
from .frequency_plan import FrequencyPlan, PowerModel, check_spurs, derive_plan, fit_power_model
from .metrics import CirMetrics, Mpc, compute_metrics
from .sounding_dsp import (
    CalibrationProfile,
    FrequencyResponse,
    ImpulseResponse,
    ProcessingSettings,
    WindowSpec,
    build_calibration,
    gain_budget,
    process_snapshots,
)
from .waveform import CrestOptConfig, ToneGrid, Waveform, fzc_waveform, optimize_crest

__version__ = "0.1.0"

__all__ = [
    "CaptureSimulator", "ChannelTap", "ImpairmentConfig", "PhaseDrift", "simulate_capture",
    "FrequencyPlan", "PowerModel", "check_spurs", "derive_plan", "fit_power_model",
    "CirMetrics", "Mpc", "compute_metrics",
    "CalibrationProfile", "FrequencyResponse", "ImpulseResponse", "ProcessingSettings",
    "WindowSpec", "build_calibration", "gain_budget", "process_snapshots",
    "CrestOptConfig", "ToneGrid", "Waveform", "fzc_waveform", "optimize_crest",
]
