"""Locked-differential racing stack: models, MPC, planners, simulator."""

__version__ = "0.1.0"

from .models import CurvState, RateInput
from .params import TireParams, VehicleParams, load_default_vehicle, load_vehicle_config
from .track import Track, load_track

__all__ = [
    "CurvState",
    "RateInput",
    "TireParams",
    "VehicleParams",
    "Track",
    "load_track",
    "load_default_vehicle",
    "load_vehicle_config",
    "__version__",
]
