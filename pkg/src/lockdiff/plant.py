"""Double-track plant used as ground truth in closed-loop simulation.

Deliberately richer than the controller models: four contact patches with
combined-slip Pacejka forces, a locked rear axle (one rotational speed, per
wheel slip from geometry), per-wheel vertical loads with both load transfers,
a first-order steering actuator with rate limit, and a synthetic engine with
gear shifting. Integrated with RK4 at 1 ms. It is not a calibration of any
real car.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .params import GRAVITY, TireParams, VehicleParams

# ODE state layout
P_X, P_Y, P_PSI, P_VX, P_VY, P_R, P_WR, P_WFL, P_WFR, P_DELTA = range(10)
PLANT_STATE_DIM = 10

IDLE_RPM = 1500.0
REDLINE_RPM = 7200.0


def engine_torque_max(rpm: float) -> float:
    """Synthetic wide-open-throttle torque curve (N m), zero past redline."""
    r = np.asarray(rpm, dtype=float)
    base = 480.0 * (1.0 - 0.45 * ((r - 4600.0) / 3400.0) ** 2)
    out = np.where(r > REDLINE_RPM, 0.0, np.maximum(base, 0.0))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PlantConfig:
    h: float = 1e-3              # RK4 substep [s]
    steer_tau: float = 0.05      # actuator lag [s]
    steer_rate_max: float = 1.2  # rad/s
    wheel_inertia: float = 1.2   # kg m^2, each front wheel
    h_roll_f: float = 0.04       # front roll-axis height [m]
    eps_speed: float = 0.8       # slip denominator floor [m/s]
    shift_up_rpm: float = 6700.0
    shift_down_rpm: float = 3800.0
    shift_hysteresis: float = 300.0


@dataclass(frozen=True)
class PlantState:
    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    r: float = 0.0
    omega_axle: float = 0.0      # locked rear axle speed [rad/s]
    omega_fl: float = 0.0
    omega_fr: float = 0.0
    delta_act: float = 0.0
    gear: int = 0
    ax_lag: float = 0.0
    ay_lag: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0
    load_clamped: bool = False

    def ode_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.vx, self.vy, self.r,
                         self.omega_axle, self.omega_fl, self.omega_fr,
                         self.delta_act], dtype=float)

    @staticmethod
    def rolling(track_speed: float, params: VehicleParams, gear: int = 0) -> "PlantState":
        """Straight rolling at a given speed with matched wheel spins."""
        w = track_speed / params.r_w
        return PlantState(vx=track_speed, omega_axle=w, omega_fl=w, omega_fr=w,
                          gear=gear)


def rpm_of(omega_axle: float, gear: int, params: VehicleParams) -> float:
    return max(IDLE_RPM, omega_axle * params.gear_ratios[gear] * params.tau_d
               * 60.0 / (2.0 * np.pi))


def select_gear(rpm: float, gear: int, cfg: PlantConfig, n_gears: int) -> int:
    if rpm >= cfg.shift_up_rpm + cfg.shift_hysteresis and gear < n_gears - 1:
        return gear + 1
    if rpm <= cfg.shift_down_rpm - cfg.shift_hysteresis and gear > 0:
        return gear - 1
    return gear


def _wheel_geometry(params: VehicleParams, tires: TireParams):
    """Constant per-wheel arrays in fl, fr, rl, rr order."""
    half_tr = params.tr / 2.0
    xw = np.array([params.lf, params.lf, -params.lr, -params.lr])
    yw = np.array([+half_tr, -half_tr, +half_tr, -half_tr])
    mu_lat = np.array([tires.front.mu, tires.front.mu, tires.rear.mu, tires.rear.mu])
    mu_long = np.array([tires.front.mu, tires.front.mu,
                        tires.rear_long.mu, tires.rear_long.mu])
    b_lat = np.array([tires.front.B, tires.front.B, tires.rear.B, tires.rear.B])
    c_lat = np.array([tires.front.C, tires.front.C, tires.rear.C, tires.rear.C])
    return xw, yw, mu_lat, mu_long, b_lat, c_lat


def _wheel_forces(z, delta, throttle, brake, gear, ay_lag, ax_lag,
                  params: VehicleParams, tires: TireParams, cfg: PlantConfig,
                  geom=None):
    """Per-wheel loads, slips and tire forces at one evaluation point."""
    vx, vy, r = z[P_VX], z[P_VY], z[P_R]
    xw, yw, mu_lat, mu_long, b_lat, c_lat = geom or _wheel_geometry(params, tires)
    omega = np.array([z[P_WFL], z[P_WFR], z[P_WR], z[P_WR]])
    cw = np.array([np.cos(delta), np.cos(delta), 1.0, 1.0])
    sw = np.array([np.sin(delta), np.sin(delta), 0.0, 0.0])

    # vertical loads
    fz_f_axle = max(params.F0_zf + params.c_down_f * vx * vx
                    - params.m * ax_lag * params.h_cg / params.l, 0.0)
    fz_r_axle = max(params.F0_zr + params.c_down_r * vx * vx
                    + params.m * ax_lag * params.h_cg / params.l, 0.0)
    k_f = (params.K_tot - params.K_r) / params.K_tot
    k_r = params.K_r / params.K_tot
    m_y = params.m * ay_lag * params.q
    dfz_f = (params.m * ay_lag * params.lr / params.l) * cfg.h_roll_f / params.tr \
        + (m_y / params.tr) * k_f
    dfz_r = (params.m * ay_lag * params.lf / params.l) * params.h_r / params.tr \
        + (m_y / params.tr) * k_r
    fz = np.array([fz_f_axle / 2 - dfz_f, fz_f_axle / 2 + dfz_f,
                   fz_r_axle / 2 - dfz_r, fz_r_axle / 2 + dfz_r])
    clamped = bool(fz.min() < 0.0)
    fz = np.maximum(fz, 0.0)

    vcx = vx - r * yw
    vcy = vy + r * xw
    vwx = cw * vcx + sw * vcy
    vwy = -sw * vcx + cw * vcy
    den = np.maximum(np.abs(vwx), cfg.eps_speed)
    kappa = (omega * params.r_w - vwx) / den
    alpha = -np.arctan(vwy / den)
    pl = tires.rear_long
    fx_w = mu_long * fz * np.sin(pl.C * np.arctan(pl.B * kappa))
    cap = np.maximum(mu_lat * fz, 1e-9)
    g = np.sqrt(np.clip(1.0 - (fx_w / cap) ** 2, 0.0, None))
    g = np.where(fz > 0.0, g, 0.0)
    fy_w = g * mu_lat * fz * np.sin(c_lat * np.arctan(b_lat * alpha))
    return fz, fx_w, fy_w, kappa, alpha, (xw, yw), clamped


def _plant_rhs(z, delta_cmd, throttle, brake, gear, ay_lag, ax_lag,
               params: VehicleParams, tires: TireParams, cfg: PlantConfig,
               geom=None):
    vx, vy, r = z[P_VX], z[P_VY], z[P_R]
    delta = z[P_DELTA]
    fz, fx_w, fy_w, kappa, alpha, (xw, yw), clamped = _wheel_forces(
        z, delta, throttle, brake, gear, ay_lag, ax_lag, params, tires, cfg, geom)

    # body-frame force components (front wheels rotated by delta)
    fx_b = fx_w.copy()
    fy_b = fy_w.copy()
    cd, sd = np.cos(delta), np.sin(delta)
    fx_b[:2] = fx_w[:2] * cd - fy_w[:2] * sd
    fy_b[:2] = fx_w[:2] * sd + fy_w[:2] * cd

    f_drag = float(params.drag_force(vx))
    f_roll = float(params.rolling_force(vx))
    sum_fx = float(np.sum(fx_b)) - f_drag - f_roll
    sum_fy = float(np.sum(fy_b))
    yaw = float(np.dot(xw, fy_b) - np.dot(yw, fx_b))

    rpm = rpm_of(z[P_WR], gear, params)
    tau_drive = throttle * engine_torque_max(rpm) * params.gear_ratios[gear] \
        * params.tau_d * params.eta_t
    brake_frac = brake / params.B_max
    tau_brake_f = params.C_bf * brake_frac * params.r_w
    tau_brake_r = params.C_br * brake_frac * params.r_w

    def ssign(w):
        return np.tanh(w / 0.5)

    dz = np.empty(PLANT_STATE_DIM)
    dz[P_X] = vx * np.cos(z[P_PSI]) - vy * np.sin(z[P_PSI])
    dz[P_Y] = vx * np.sin(z[P_PSI]) + vy * np.cos(z[P_PSI])
    dz[P_PSI] = r
    dz[P_VX] = sum_fx / params.m + vy * r
    dz[P_VY] = sum_fy / params.m - vx * r
    dz[P_R] = yaw / params.Iz
    dz[P_WR] = (tau_drive - params.r_w * (fx_w[2] + fx_w[3])
                - tau_brake_r * ssign(z[P_WR])) / params.J0
    dz[P_WFL] = (-params.r_w * fx_w[0] - 0.5 * tau_brake_f * ssign(z[P_WFL])) \
        / cfg.wheel_inertia
    dz[P_WFR] = (-params.r_w * fx_w[1] - 0.5 * tau_brake_f * ssign(z[P_WFR])) \
        / cfg.wheel_inertia
    dz[P_DELTA] = np.clip((delta_cmd - delta) / cfg.steer_tau,
                          -cfg.steer_rate_max, cfg.steer_rate_max)
    return dz, clamped


class PlantAbort(RuntimeError):
    """Non-finite plant state; carries the last good state."""

    def __init__(self, msg, state):
        super().__init__(msg)
        self.state = state


def plant_step(state: PlantState, throttle: float, brake: float, delta_cmd: float,
               dt: float, params: VehicleParams, tires: TireParams,
               cfg: PlantConfig | None = None):
    """Advance the plant by dt (RK4 at cfg.h) with inputs held constant.

    Returns (new_state, info) where info carries wheel-level quantities from
    the last substep for telemetry.
    """
    cfg = cfg or PlantConfig()
    throttle = float(np.clip(throttle, 0.0, 1.0))
    brake = float(np.clip(brake, 0.0, params.B_max))
    rpm = rpm_of(state.omega_axle, state.gear, params)
    gear = select_gear(rpm, state.gear, cfg, len(params.gear_ratios))

    z = state.ode_array()
    ay, ax = state.ay_lag, state.ax_lag
    n_sub = max(1, int(round(dt / cfg.h)))
    clamped = False
    geom = _wheel_geometry(params, tires)
    for _ in range(n_sub):
        k1, c1 = _plant_rhs(z, delta_cmd, throttle, brake, gear, ay, ax,
                            params, tires, cfg, geom)
        k2, _ = _plant_rhs(z + 0.5 * cfg.h * k1, delta_cmd, throttle, brake, gear,
                           ay, ax, params, tires, cfg, geom)
        k3, _ = _plant_rhs(z + 0.5 * cfg.h * k2, delta_cmd, throttle, brake, gear,
                           ay, ax, params, tires, cfg, geom)
        k4, _ = _plant_rhs(z + cfg.h * k3, delta_cmd, throttle, brake, gear,
                           ay, ax, params, tires, cfg, geom)
        z = z + (cfg.h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        clamped = clamped or c1
        ay = float(k1[P_VY] + z[P_VX] * z[P_R])
        ax = float(k1[P_VX] - z[P_VY] * z[P_R])
        if not np.all(np.isfinite(z)):
            raise PlantAbort("non-finite plant state", state)

    fz, fx_w, fy_w, kappa, alpha, _, _ = _wheel_forces(
        z, z[P_DELTA], throttle, brake, gear, ay, ax, params, tires, cfg, geom)
    m_diff = 0.5 * (fx_w[3] - fx_w[2]) * params.tr
    new_state = PlantState(
        x=float(z[P_X]), y=float(z[P_Y]), psi=float(z[P_PSI]),
        vx=float(z[P_VX]), vy=float(z[P_VY]), r=float(z[P_R]),
        omega_axle=float(z[P_WR]), omega_fl=float(z[P_WFL]), omega_fr=float(z[P_WFR]),
        delta_act=float(z[P_DELTA]), gear=gear, ax_lag=ax, ay_lag=ay,
        throttle=throttle, brake=brake, load_clamped=clamped)
    info = {
        "fz": fz, "fx": fx_w, "fy": fy_w, "kappa": kappa, "alpha": alpha,
        "m_diff": float(m_diff), "rpm": rpm_of(new_state.omega_axle, gear, params),
        "gear": gear,
    }
    return new_state, info
