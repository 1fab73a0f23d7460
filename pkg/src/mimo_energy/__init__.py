"""Transmit-energy statistics of a zero-forcing multi-user MIMO base station with mobile users."""

__version__ = "0.1.0"

from .analytics import (
    MomentPair,
    ThetaSeries,
    battery_requirement,
    mean_energy,
    moments,
    outage_probability,
    theta,
    variance_fading,
    variance_mobility,
)
from .cell_model import CellGeometry, MobilityParams, PropagatorParams
from .channel_engine import FadingMode, SystemConfig, simulate_energy, zf_power
from .montecarlo import run_trials, summarize, validate_theorem1
from .special_math import ZeroKind

__all__ = [
    "CellGeometry",
    "FadingMode",
    "MobilityParams",
    "MomentPair",
    "PropagatorParams",
    "SystemConfig",
    "ThetaSeries",
    "ZeroKind",
    "battery_requirement",
    "mean_energy",
    "moments",
    "outage_probability",
    "run_trials",
    "simulate_energy",
    "summarize",
    "theta",
    "validate_theorem1",
    "variance_fading",
    "variance_mobility",
    "zf_power",
]
