"""Low-level longitudinal control: feedforward force + PI correction.

Force targets convert to throttle through an inverse engine map (rpm x torque
-> throttle) or to brake pressure through the linear brake model. Two printed
formula variants from the source material are dimensionally suspect; the
defaults use the physically consistent forms and config switches expose the
printed ones for A/B comparison (see README notes).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .params import ConfigError, TireParams, VehicleParams


@dataclass(frozen=True)
class LowLevelConfig:
    kp_v: float = 900.0        # N per m/s speed error
    ki_v: float = 250.0        # N per m speed-error integral
    kp_a: float = 60.0         # N per m/s^2 accel error
    ki_a: float = 0.0
    integral_clamp: float = 2500.0   # N
    hysteresis_band: float = 50.0    # N around zero force
    # printed-form switches (suspected typos in the source formulas)
    resistances_reduce_request: bool = False   # Eq. as printed: F = m a - Fd - Froll
    torque_multiplies_ratios: bool = False     # Eq. as printed: T = F rw tau_i tau_d / eta


@dataclass(frozen=True)
class PiState:
    int_v: float = 0.0
    int_a: float = 0.0
    mode: int = 0              # +1 throttle, -1 brake, 0 undecided


class ThrottleMap:
    """Grid of rpm x torque -> throttle fraction, bilinear inside, clamped outside."""

    def __init__(self, rpm: np.ndarray, torque: np.ndarray, table: np.ndarray):
        self.rpm = np.asarray(rpm, dtype=float)
        self.torque = np.asarray(torque, dtype=float)
        self.table = np.asarray(table, dtype=float)
        if self.table.shape != (len(self.rpm), len(self.torque)):
            raise ConfigError("throttle map shape mismatch")
        if np.any(np.diff(self.rpm) <= 0) or np.any(np.diff(self.torque) <= 0):
            raise ConfigError("throttle map breakpoints must increase")
        if np.any(np.diff(self.table, axis=1) < -1e-9):
            raise ConfigError("throttle map must be monotone in torque")

    def lookup(self, rpm: float, torque: float) -> float:
        r = float(np.clip(rpm, self.rpm[0], self.rpm[-1]))
        t = float(np.clip(torque, self.torque[0], self.torque[-1]))
        i = int(np.clip(np.searchsorted(self.rpm, r) - 1, 0, len(self.rpm) - 2))
        j = int(np.clip(np.searchsorted(self.torque, t) - 1, 0, len(self.torque) - 2))
        fr = (r - self.rpm[i]) / (self.rpm[i + 1] - self.rpm[i])
        ft = (t - self.torque[j]) / (self.torque[j + 1] - self.torque[j])
        z = (self.table[i, j] * (1 - fr) * (1 - ft)
             + self.table[i + 1, j] * fr * (1 - ft)
             + self.table[i, j + 1] * (1 - fr) * ft
             + self.table[i + 1, j + 1] * fr * ft)
        return float(np.clip(z, 0.0, 1.0))

    def save(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rpm\\torque"] + [f"{t:.6g}" for t in self.torque])
            for i, r in enumerate(self.rpm):
                w.writerow([f"{r:.6g}"] + [f"{v:.6g}" for v in self.table[i]])

    @staticmethod
    def load(path: str | Path) -> "ThrottleMap":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"throttle map not found: {path}")
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        torque = np.array([float(v) for v in rows[0][1:]])
        rpm = np.array([float(r[0]) for r in rows[1:]])
        table = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return ThrottleMap(rpm, torque, table)

    @staticmethod
    def from_engine_curve(rpm_grid=None, torque_grid=None) -> "ThrottleMap":
        """Invert the synthetic plant engine map (throttle = T / T_max(rpm))."""
        from .plant import engine_torque_max

        rpm_grid = np.linspace(1500.0, 7200.0, 20) if rpm_grid is None else rpm_grid
        torque_grid = np.linspace(0.0, 520.0, 27) if torque_grid is None else torque_grid
        table = np.empty((len(rpm_grid), len(torque_grid)))
        for i, rr in enumerate(rpm_grid):
            tmax = max(engine_torque_max(rr), 1e-6)
            table[i] = np.clip(torque_grid / tmax, 0.0, 1.0)
        return ThrottleMap(rpm_grid, torque_grid, table)


def feedforward_force(v_ref: float, a_ref: float, vx: float, params: VehicleParams,
                      cfg: LowLevelConfig | None = None) -> float:
    """Wheel-force request for (v_ref, a_ref) including driveline inertia.

    Resistances are overcome by default (+F_d +F_roll); the printed-sign
    variant subtracts them.
    """
    cfg = cfg or LowLevelConfig()
    f_d = float(params.drag_force(v_ref))
    f_roll = float(params.rolling_force(vx))
    inertial = params.m * a_ref + params.J0 * a_ref / params.r_w**2
    if cfg.resistances_reduce_request:
        return inertial - f_d - f_roll
    return inertial + f_d + f_roll


def traction_clip(f_ref: float, fz_r: float, tires: TireParams) -> float:
    """Clip positive requests to the rear longitudinal grip limit."""
    if f_ref < 0.0:
        return f_ref
    return min(f_ref, tires.rear_long.mu * fz_r)


def torque_request(force: float, gear_index: int, params: VehicleParams,
                   cfg: LowLevelConfig | None = None) -> float:
    """Engine torque for a wheel force; ratios divide on the way back."""
    cfg = cfg or LowLevelConfig()
    tau_i = params.gear_ratios[gear_index]
    if cfg.torque_multiplies_ratios:
        return force * params.r_w * tau_i * params.tau_d / params.eta_t
    return force * params.r_w / (tau_i * params.tau_d * params.eta_t)


def brake_command(f_neg: float, fz_f: float, fz_r: float, params: VehicleParams,
                  tires: TireParams) -> float:
    """Brake pressure for a negative force request, grip-limited first."""
    if f_neg >= 0.0:
        return 0.0
    limit = tires.front.mu * fz_f + tires.rear_long.mu * fz_r
    f_tar = max(f_neg, -limit)
    pressure = abs(f_tar) / (params.C_bf + params.C_br) * params.B_max
    return float(np.clip(pressure, 0.0, params.B_max))


def longitudinal_tick(v_ref: float, a_ref: float, vx_meas: float, ax_meas: float,
                      rpm: float, gear: int, dt: float, state: PiState,
                      params: VehicleParams, tires: TireParams,
                      throttle_map: ThrottleMap,
                      cfg: LowLevelConfig | None = None):
    """One 100 Hz low-level update: (throttle, brake pressure, new PiState)."""
    cfg = cfg or LowLevelConfig()
    f_ff = feedforward_force(v_ref, a_ref, vx_meas, params, cfg)
    err_v = v_ref - vx_meas
    err_a = a_ref - ax_meas
    f_pi = (cfg.kp_v * err_v + cfg.ki_v * state.int_v
            + cfg.kp_a * err_a + cfg.ki_a * state.int_a)
    f_total = f_ff + f_pi

    # mode hysteresis: hold the current path inside the +-band around zero
    mode = state.mode
    if mode >= 0 and f_total < -cfg.hysteresis_band:
        mode = -1
    elif mode <= 0 and f_total > cfg.hysteresis_band:
        mode = +1
    elif mode == 0:
        mode = +1 if f_total >= 0.0 else -1

    fz_f = params.F0_zf + params.c_down_f * vx_meas**2
    fz_r = params.F0_zr + params.c_down_r * vx_meas**2

    throttle = 0.0
    brake = 0.0
    saturated = False
    if mode > 0:
        f_cmd = traction_clip(max(f_total, 0.0), fz_r, tires)
        t_req = torque_request(f_cmd, gear, params, cfg)
        throttle = throttle_map.lookup(rpm, t_req)
        saturated = throttle >= 1.0 or f_cmd < f_total - 1e-9
    else:
        brake = brake_command(min(f_total, 0.0), fz_f, fz_r, params, tires)
        saturated = brake >= params.B_max

    # anti-windup: freeze integrals that push further into saturation
    int_v = state.int_v
    int_a = state.int_a
    if not (saturated and err_v * np.sign(f_total if f_total else 1.0) > 0):
        int_v = float(np.clip(int_v + err_v * dt,
                              -cfg.integral_clamp / max(cfg.ki_v, 1e-9),
                              cfg.integral_clamp / max(cfg.ki_v, 1e-9)))
    if cfg.ki_a > 0 and not saturated:
        int_a = float(np.clip(int_a + err_a * dt,
                              -cfg.integral_clamp / cfg.ki_a,
                              cfg.integral_clamp / cfg.ki_a))
    return throttle, brake, replace(state, int_v=int_v, int_a=int_a, mode=mode)
