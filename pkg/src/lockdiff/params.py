"""Vehicle and tire parameter sets.

The shipped defaults describe a plausible open-wheel racecar. They are NOT a
calibration of any real vehicle; treat every number as synthetic.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

GRAVITY = 9.81  # m/s^2

# Speed floor below which slip quantities are not evaluated (low-speed flag).
EPS_SPEED = 0.5  # m/s
# Yaw-rate floor used when forming an explicit turning radius R = vx / r.
EPS_YAW_RATE = 1e-3  # rad/s
# Kinematic/dynamic blend band.
V_BLEND_LO = 3.0  # m/s
V_BLEND_HI = 8.0  # m/s


class ConfigError(ValueError):
    """Raised when a parameter file or parameter set fails validation."""


@dataclass(frozen=True)
class AxleTireParams:
    """Pacejka macro-parameters for one axle characteristic."""

    B: float
    C: float
    mu: float

    def validate(self, name: str) -> None:
        if not self.B > 0:
            raise ConfigError(f"{name}: B must be > 0 (got {self.B})")
        if not 0 < self.C <= 2:
            raise ConfigError(f"{name}: C must be in (0, 2] (got {self.C})")
        if not self.mu > 0:
            raise ConfigError(f"{name}: mu must be > 0 (got {self.mu})")


@dataclass(frozen=True)
class TireParams:
    """Front/rear lateral characteristics plus the rear longitudinal one."""

    front: AxleTireParams = field(default_factory=lambda: AxleTireParams(B=13.0, C=1.5, mu=1.60))
    rear: AxleTireParams = field(default_factory=lambda: AxleTireParams(B=11.0, C=1.5, mu=1.70))
    rear_long: AxleTireParams = field(default_factory=lambda: AxleTireParams(B=8.0, C=1.5, mu=1.65))

    def validate(self) -> None:
        self.front.validate("tires.front")
        self.rear.validate("tires.rear")
        self.rear_long.validate("tires.rear_long")


@dataclass(frozen=True)
class VehicleParams:
    """Masses, geometry, aero, roll stiffness, brakes and drivetrain.

    All zero-speed axle loads are stored explicitly so that configs can shift
    weight distribution without touching lf/lr.
    """

    m: float = 750.0            # kg
    Iz: float = 1000.0          # kg m^2
    lf: float = 1.60            # m, CoG to front axle
    lr: float = 1.40            # m, CoG to rear axle
    tr: float = 1.60            # m, rear track width
    h_r: float = 0.06           # m, roll-axis height at the rear axle
    q: float = 0.12             # m, CoG height above the roll axis
    h_cg: float = 0.30          # m, CoG height above ground
    K_r: float = 5.5e5          # N m/rad, rear roll stiffness
    K_tot: float = 1.0e6        # N m/rad, total roll stiffness
    F0_zf: float = 3433.5       # N, static front axle load
    F0_zr: float = 3924.0       # N, static rear axle load
    c_drag: float = 1.10        # N/(m/s)^2, lumped drag  F_d = c_drag vx^2
    c_down_f: float = 0.55      # N/(m/s)^2, front downforce coefficient
    c_down_r: float = 0.90      # N/(m/s)^2, rear downforce coefficient
    c_roll: float = 0.015       # rolling-resistance coefficient
    # Brakes: axle force per unit pressure, and the pressure ceiling.
    C_bf: float = 7000.0        # N at full pressure, front
    C_br: float = 5500.0        # N at full pressure, rear
    B_max: float = 80.0         # bar
    # Drivetrain.
    r_w: float = 0.30           # m, rear wheel radius
    gear_ratios: tuple[float, ...] = (2.92, 2.18, 1.72, 1.43, 1.23, 1.08)
    tau_d: float = 3.20         # final drive
    eta_t: float = 0.92         # transmission efficiency
    J0: float = 8.0             # kg m^2, driveline inertia referred to the axle
    steer_max: float = 0.35     # rad, steering box limit

    @property
    def l(self) -> float:
        return self.lf + self.lr

    def drag_force(self, vx):
        return self.c_drag * vx * vx

    def rolling_force(self, vx):
        """Constant above 1 m/s, tapered linearly to zero below."""
        import numpy as np

        taper = np.clip(vx, 0.0, 1.0)
        return self.c_roll * self.m * GRAVITY * taper

    def validate(self) -> None:
        positive = ["m", "Iz", "lf", "lr", "tr", "h_r", "q", "h_cg", "K_r", "K_tot",
                    "F0_zf", "F0_zr", "C_bf", "C_br", "B_max", "r_w", "tau_d",
                    "eta_t", "J0", "steer_max"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"vehicle.{name} must be > 0 (got {getattr(self, name)})")
        if self.K_r > self.K_tot:
            raise ConfigError(f"vehicle.K_r ({self.K_r}) must not exceed K_tot ({self.K_tot})")
        if not all(g > 0 for g in self.gear_ratios):
            raise ConfigError("vehicle.gear_ratios must all be > 0")


def default_data_path(name: str) -> Path:
    """Path of a data file shipped with the package."""
    return Path(resources.files("lockdiff").joinpath("data", name))  # type: ignore[arg-type]


def _split_keys(flat: dict) -> tuple[dict, dict]:
    vehicle_fields = {f.name for f in dataclasses.fields(VehicleParams)}
    veh: dict = {}
    tire_raw: dict = {}
    for key, value in flat.items():
        if key in ("label", "notes"):
            continue
        if key.startswith("tire_"):
            tire_raw[key] = value
        elif key in vehicle_fields:
            veh[key] = value
        else:
            raise ConfigError(f"unknown vehicle config key: {key!r}")
    return veh, tire_raw


def _axle_from(raw: dict, prefix: str, fallback: AxleTireParams) -> AxleTireParams:
    return AxleTireParams(
        B=float(raw.get(f"tire_{prefix}_B", fallback.B)),
        C=float(raw.get(f"tire_{prefix}_C", fallback.C)),
        mu=float(raw.get(f"tire_{prefix}_mu", fallback.mu)),
    )


def load_vehicle_config(path: str | Path) -> tuple[VehicleParams, TireParams]:
    """Read a flat-key YAML vehicle file into (VehicleParams, TireParams)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"vehicle config not found: {path}")
    with open(path) as fh:
        flat = yaml.safe_load(fh)
    if not isinstance(flat, dict):
        raise ConfigError(f"vehicle config {path} must be a flat key: value mapping")
    veh_raw, tire_raw = _split_keys(flat)
    if "gear_ratios" in veh_raw:
        veh_raw["gear_ratios"] = tuple(float(g) for g in veh_raw["gear_ratios"])
    defaults = TireParams()
    tires = TireParams(
        front=_axle_from(tire_raw, "front", defaults.front),
        rear=_axle_from(tire_raw, "rear", defaults.rear),
        rear_long=_axle_from(tire_raw, "rear_long", defaults.rear_long),
    )
    params = VehicleParams(**{k: (v if k == "gear_ratios" else float(v)) for k, v in veh_raw.items()})
    params.validate()
    tires.validate()
    return params, tires


def load_default_vehicle() -> tuple[VehicleParams, TireParams]:
    return load_vehicle_config(default_data_path("vehicle_default.yaml"))
