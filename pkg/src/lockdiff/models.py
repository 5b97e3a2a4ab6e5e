"""Vehicle models over the shared curvilinear state.

Three continuous-time models share the state layout
x = [s, n, mu, vx, vy, r, delta, D] with rate inputs u = [ddelta, dD]:

* kinematic single track (low speed),
* dynamic single track (lumped axles, no differential moment),
* locked-differential tricycle (single front axle, two rear wheels whose
  opposing longitudinal slip produces a yaw moment).

Every function is pure and broadcasts over leading batch dimensions, so the
same code serves scalar simulation and stage-parallel MPC linearization.
The lateral-acceleration and yaw-moment context values (ay, m0_diff) are
lagged quantities owned by the caller; rollout helpers update them from the
previous evaluation to avoid an algebraic loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import EPS_SPEED, V_BLEND_HI, V_BLEND_LO, TireParams, VehicleParams

IDX_S, IDX_N, IDX_MU, IDX_VX, IDX_VY, IDX_R, IDX_DELTA, IDX_D = range(8)
STATE_DIM = 8
INPUT_DIM = 2

FRONT = "front"
REAR = "rear"


class CurvatureSingularityError(ValueError):
    """State beyond the centerline's center of curvature (1 - n*rho <= 0)."""


@dataclass(frozen=True)
class CurvState:
    """Curvilinear vehicle state; D is the commanded longitudinal accel."""

    s: float = 0.0
    n: float = 0.0
    mu: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    r: float = 0.0
    delta: float = 0.0
    D: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.n, self.mu, self.vx, self.vy, self.r,
                         self.delta, self.D], dtype=float)

    @staticmethod
    def from_array(x) -> "CurvState":
        x = np.asarray(x, dtype=float)
        return CurvState(*(float(v) for v in x))


@dataclass(frozen=True)
class RateInput:
    ddelta: float = 0.0
    dD: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.ddelta, self.dD], dtype=float)

    @staticmethod
    def from_array(u) -> "RateInput":
        u = np.asarray(u, dtype=float)
        return RateInput(float(u[0]), float(u[1]))


@dataclass(frozen=True)
class RearWheelState:
    """Per-wheel rear axle quantities at one evaluation point."""

    Fz_rl: float
    Fz_rr: float
    Fx_rl: float
    Fx_rr: float
    M_diff: float
    clamped: bool = False


def _as_xu(state, u):
    x = state.as_array() if isinstance(state, CurvState) else np.asarray(state, dtype=float)
    uu = u.as_array() if isinstance(u, RateInput) else np.asarray(u, dtype=float)
    return x, uu


# -- elementary force blocks --------------------------------------------------


def lateral_axle_force(axle: str, slip_angle, fz, g, tires: TireParams):
    """Axle lateral force G * mu * Fz * sin(C atan(B alpha)).

    The caller supplies slip_angle in the force-aligned convention (positive
    angle -> positive force); the derivative functions negate the geometric
    slip angle alpha = atan((vy +- l r)/vx) -+ delta so the force opposes it.
    """
    p = tires.front if axle == FRONT else tires.rear
    return g * p.mu * fz * np.sin(p.C * np.arctan(p.B * np.asarray(slip_angle, dtype=float)))


def locked_axle_slip_ratios(vx, r, R, tr):
    """Slip ratios (k_rl, k_rr) of a locked axle from the turning radius R.

    Wheel path speeds are v_rj = r (R -+ tr/2) (left gets -, right gets +,
    R signed by r). Below the yaw-rate floor the kinematic limit r R -> vx
    is substituted so straight running gives exactly zero slip. Below the
    low-speed floor both ratios are zero and the flag is set.
    """
    from .params import EPS_YAW_RATE

    vx = np.asarray(vx, dtype=float)
    r = np.asarray(r, dtype=float)
    low = vx <= EPS_SPEED
    vx_safe = np.where(low, 1.0, vx)
    r_R = np.where(np.abs(r) >= EPS_YAW_RATE, r * np.asarray(R), vx)
    v_rl = r_R - r * tr / 2.0
    v_rr = r_R + r * tr / 2.0
    k_rl = np.where(low, 0.0, (vx - v_rl) / vx_safe)
    k_rr = np.where(low, 0.0, (vx - v_rr) / vx_safe)
    return k_rl, k_rr, bool(np.any(low))


def coast_longitudinal_force(k, fz, tires: TireParams):
    """Rear coasting force mu_r Fz sin(Cx atan(Bx k))."""
    p = tires.rear_long
    return p.mu * fz * np.sin(p.C * np.arctan(p.B * np.asarray(k, dtype=float)))


def combined_slip_weight(fx, fz, mu_peak):
    """Friction-ellipse lateral weight; 0 when the wheel is unloaded."""
    fx = np.asarray(fx, dtype=float)
    fz = np.asarray(fz, dtype=float)
    cap = mu_peak * np.where(fz > 0.0, fz, 1.0)
    ratio = np.where(fz > 0.0, fx / cap, 1.0)
    return np.sqrt(np.clip(1.0 - ratio * ratio, 0.0, None))


def diff_yaw_moment(fx_rl, fx_rr, tr):
    return 0.5 * (np.asarray(fx_rr, dtype=float) - np.asarray(fx_rl, dtype=float)) * tr


def rear_vertical_loads(state, ay, m0_diff, params: VehicleParams):
    """Per-wheel rear loads from static + aero + longitudinal + lateral transfer.

    Returns (Fz_rl, Fz_rr, Fz_r axle total, clamped flag). Negative wheel
    loads clamp to zero; the pre-clamp pair always sums to the axle load.
    """
    x, _ = _as_xu(state, RateInput())
    vx = x[..., IDX_VX]
    D = x[..., IDX_D]
    fz_rl, fz_rr, fz_r, clamped = _rear_loads(vx, D, np.asarray(ay, dtype=float),
                                              np.asarray(m0_diff, dtype=float), params)
    return fz_rl, fz_rr, fz_r, bool(np.any(clamped))


def _rear_loads(vx, D, ay, m0, P: VehicleParams):
    fz_r = P.F0_zr + P.c_down_r * vx * vx + P.m * D * P.h_cg / P.l
    fz_r = np.maximum(fz_r, 0.0)
    f_yr = (P.m * ay * P.lf + m0) / P.l
    m_y = P.m * ay * P.q
    dfz_lat = f_yr * P.h_r / P.tr + (m_y / P.tr) * (P.K_r / P.K_tot)
    raw_l = 0.5 * fz_r - dfz_lat
    raw_r = 0.5 * fz_r + dfz_lat
    clamped = (raw_l < 0.0) | (raw_r < 0.0)
    return np.maximum(raw_l, 0.0), np.maximum(raw_r, 0.0), fz_r, clamped


def _front_load(vx, D, P: VehicleParams):
    return np.maximum(P.F0_zf + P.c_down_f * vx * vx - P.m * D * P.h_cg / P.l, 0.0)


def command_force_split(D, params: VehicleParams, dfz_lat, fz_r):
    """Split the commanded force m*D into (front, rear-left, rear-right).

    Traction is rear only, split proportionally to the wheel loads; braking
    first splits front/rear by brake balance, then per loads at the rear.
    """
    D = np.asarray(D, dtype=float)
    dfz_lat = np.asarray(dfz_lat, dtype=float)
    fz_r = np.asarray(fz_r, dtype=float)
    total = params.m * D
    bal_f = params.C_bf / (params.C_bf + params.C_br)
    f_front = np.where(D < 0.0, total * bal_f, 0.0)
    rear = total - f_front
    fz_safe = np.where(fz_r > 0.0, fz_r, 1.0)
    frac_l = np.where(fz_r > 0.0, np.clip(0.5 - dfz_lat / fz_safe, 0.0, 1.0), 0.5)
    return f_front, rear * frac_l, rear * (1.0 - frac_l)


# -- derivative cores ----------------------------------------------------------


def _path_kinematics(x, rho):
    n = x[..., IDX_N]
    mu = x[..., IDX_MU]
    vx = x[..., IDX_VX]
    vy = x[..., IDX_VY]
    r = x[..., IDX_R]
    one_m = 1.0 - n * rho
    one_m = np.where(one_m <= 0.0, np.nan, one_m)
    sdot = (vx * np.cos(mu) - vy * np.sin(mu)) / one_m
    ndot = vx * np.sin(mu) + vy * np.cos(mu)
    mudot = r - rho * sdot
    return sdot, ndot, mudot


def _tricycle_core(x, u, rho, m0, ay, P: VehicleParams, T: TireParams, detail: bool):
    vx = x[..., IDX_VX]
    vy = x[..., IDX_VY]
    r = x[..., IDX_R]
    delta = x[..., IDX_DELTA]
    D = x[..., IDX_D]

    low = vx <= EPS_SPEED
    vx_safe = np.where(low, 1.0, vx)

    # Locked-axle slip ratios with R = vx/r substituted exactly, which keeps
    # the field smooth through r = 0: k_rj = -+ r tr / (2 vx).
    k_rl = np.where(low, 0.0, r * P.tr / (2.0 * vx_safe))
    k_rr = -k_rl

    fz_rl, fz_rr, fz_r, clamp_flag = _rear_loads(vx, D, ay, m0, P)
    fz_f = _front_load(vx, D, P)

    fp_rl = coast_longitudinal_force(k_rl, fz_rl, T)
    fp_rr = coast_longitudinal_force(k_rr, fz_rr, T)

    dfz_lat = 0.5 * (fz_rr - fz_rl)
    fc_f, fc_rl, fc_rr = command_force_split(D, P, dfz_lat, fz_r)

    fx_rl = fp_rl + fc_rl
    fx_rr = fp_rr + fc_rr
    m_diff = diff_yaw_moment(fx_rl, fx_rr, P.tr)

    g_rl = combined_slip_weight(fx_rl, fz_rl, T.rear_long.mu)
    g_rr = combined_slip_weight(fx_rr, fz_rr, T.rear_long.mu)
    g_f = combined_slip_weight(fc_f, fz_f, T.front.mu)

    alpha_f = delta - np.arctan((vy + P.lf * r) / vx_safe)
    alpha_r = -np.arctan((vy - P.lr * r) / vx_safe)
    fy_f = lateral_axle_force(FRONT, alpha_f, fz_f, g_f, T)
    fy_r = (lateral_axle_force(REAR, alpha_r, fz_rl, g_rl, T)
            + lateral_axle_force(REAR, alpha_r, fz_rr, g_rr, T))

    f_drag = P.drag_force(vx)
    f_roll = P.rolling_force(vx)

    sdot, ndot, mudot = _path_kinematics(x, rho)
    cos_d = np.cos(delta)
    sin_d = np.sin(delta)
    vxdot = ((fc_rl + fc_rr) - f_drag - f_roll - fy_f * sin_d + fc_f * cos_d) / P.m + vy * r
    vydot = (fy_r + fy_f * cos_d + fc_f * sin_d) / P.m - vx * r
    rdot = (m_diff + P.lf * (fy_f * cos_d + fc_f * sin_d) - P.lr * fy_r) / P.Iz

    dx = np.stack([sdot, ndot, mudot, vxdot, vydot, rdot,
                   u[..., 0], u[..., 1]], axis=-1)
    if not detail:
        return dx
    return dx, {
        "m_diff": m_diff, "fz_rl": fz_rl, "fz_rr": fz_rr, "fz_r": fz_r, "fz_f": fz_f,
        "fx_rl": fx_rl, "fx_rr": fx_rr, "fp_rl": fp_rl, "fp_rr": fp_rr,
        "fc_f": fc_f, "fc_rl": fc_rl, "fc_rr": fc_rr,
        "k_rl": k_rl, "k_rr": k_rr, "fy_f": fy_f, "fy_r": fy_r,
        "g_rl": g_rl, "g_rr": g_rr, "g_f": g_f,
        "load_clamped": clamp_flag, "ay_next": vydot + vx * r,
    }


def _single_track_core(x, u, rho, ay, P: VehicleParams, T: TireParams, detail: bool):
    vx = x[..., IDX_VX]
    vy = x[..., IDX_VY]
    r = x[..., IDX_R]
    delta = x[..., IDX_DELTA]
    D = x[..., IDX_D]

    low = vx <= EPS_SPEED
    vx_safe = np.where(low, 1.0, vx)

    fz_rl, fz_rr, fz_r, _ = _rear_loads(vx, D, ay, 0.0 * np.asarray(ay), P)
    fz_f = _front_load(vx, D, P)
    fc_f, fc_rl, fc_rr = command_force_split(D, P, 0.5 * (fz_rr - fz_rl), fz_r)
    fc_r = fc_rl + fc_rr

    g_r = combined_slip_weight(fc_r, fz_r, T.rear_long.mu)
    g_f = combined_slip_weight(fc_f, fz_f, T.front.mu)

    alpha_f = delta - np.arctan((vy + P.lf * r) / vx_safe)
    alpha_r = -np.arctan((vy - P.lr * r) / vx_safe)
    fy_f = lateral_axle_force(FRONT, alpha_f, fz_f, g_f, T)
    fy_r = lateral_axle_force(REAR, alpha_r, fz_r, g_r, T)

    f_drag = P.drag_force(vx)
    f_roll = P.rolling_force(vx)

    sdot, ndot, mudot = _path_kinematics(x, rho)
    cos_d = np.cos(delta)
    sin_d = np.sin(delta)
    vxdot = (fc_r - f_drag - f_roll - fy_f * sin_d + fc_f * cos_d) / P.m + vy * r
    vydot = (fy_r + fy_f * cos_d + fc_f * sin_d) / P.m - vx * r
    rdot = (P.lf * (fy_f * cos_d + fc_f * sin_d) - P.lr * fy_r) / P.Iz

    dx = np.stack([sdot, ndot, mudot, vxdot, vydot, rdot,
                   u[..., 0], u[..., 1]], axis=-1)
    if not detail:
        return dx
    return dx, {"fy_f": fy_f, "fy_r": fy_r, "fz_r": fz_r, "fz_f": fz_f,
                "fc_f": fc_f, "fc_r": fc_r, "ay_next": vydot + vx * r}


def _kinematic_core(x, u, rho, P: VehicleParams):
    vx = x[..., IDX_VX]
    delta = x[..., IDX_DELTA]
    D = x[..., IDX_D]
    sdot, ndot, mudot = _path_kinematics(x, rho)
    cos_d = np.cos(delta)
    vxdot = D
    rdot = (vxdot * np.tan(delta) + vx * u[..., 0] / (cos_d * cos_d)) / P.l
    vydot = P.lr * rdot
    return np.stack([sdot, ndot, mudot, vxdot * np.ones_like(sdot), vydot, rdot,
                     u[..., 0] * np.ones_like(sdot), u[..., 1] * np.ones_like(sdot)], axis=-1)


def blend_factor(vx):
    return np.clip((np.asarray(vx, dtype=float) - V_BLEND_LO) / (V_BLEND_HI - V_BLEND_LO),
                   0.0, 1.0)


# -- public derivative operations ---------------------------------------------


def _maybe_raise_singularity(state, x, rho):
    if isinstance(state, CurvState):
        if 1.0 - x[IDX_N] * float(rho) <= 0.0:
            raise CurvatureSingularityError(
                f"1 - n*rho = {1.0 - x[IDX_N] * float(rho):.3e} <= 0 at s={x[IDX_S]:.2f}")


def tricycle_derivative(state, u, rho, m0_diff, params: VehicleParams,
                        tires: TireParams, ay=0.0):
    """Locked-differential tricycle time derivative of the curvilinear state."""
    x, uu = _as_xu(state, u)
    _maybe_raise_singularity(state, x, rho)
    return _tricycle_core(x, uu, np.asarray(rho, dtype=float),
                          np.asarray(m0_diff, dtype=float),
                          np.asarray(ay, dtype=float), params, tires, detail=False)


def tricycle_detail(state, u, rho, m0_diff, params: VehicleParams,
                    tires: TireParams, ay=0.0):
    """Derivative plus the per-wheel force breakdown (for logging and lags)."""
    x, uu = _as_xu(state, u)
    return _tricycle_core(x, uu, np.asarray(rho, dtype=float),
                          np.asarray(m0_diff, dtype=float),
                          np.asarray(ay, dtype=float), params, tires, detail=True)


def rear_wheel_state(state, u, rho, m0_diff, params, tires, ay=0.0) -> RearWheelState:
    _, det = tricycle_detail(state, u, rho, m0_diff, params, tires, ay)
    return RearWheelState(Fz_rl=float(det["fz_rl"]), Fz_rr=float(det["fz_rr"]),
                          Fx_rl=float(det["fx_rl"]), Fx_rr=float(det["fx_rr"]),
                          M_diff=float(det["m_diff"]), clamped=bool(det["load_clamped"]))


def single_track_derivative(state, u, rho, params: VehicleParams,
                            tires: TireParams, ay=0.0):
    """Dynamic single-track derivative (no differential yaw moment)."""
    x, uu = _as_xu(state, u)
    _maybe_raise_singularity(state, x, rho)
    return _single_track_core(x, uu, np.asarray(rho, dtype=float),
                              np.asarray(ay, dtype=float), params, tires, detail=False)


def kinematic_derivative(state, u, rho, params: VehicleParams):
    """Kinematic model written in the dynamic state layout."""
    x, uu = _as_xu(state, u)
    _maybe_raise_singularity(state, x, rho)
    return _kinematic_core(x, uu, np.asarray(rho, dtype=float), params)


def blended_derivative(state, u, rho, m0_diff, params: VehicleParams,
                       tires: TireParams, ay=0.0):
    """Kinematic/tricycle blend, linear in vx across [3, 8] m/s."""
    x, uu = _as_xu(state, u)
    _maybe_raise_singularity(state, x, rho)
    lam = blend_factor(x[..., IDX_VX])
    dyn = _tricycle_core(x, uu, np.asarray(rho, dtype=float),
                         np.asarray(m0_diff, dtype=float),
                         np.asarray(ay, dtype=float), params, tires, detail=False)
    kin = _kinematic_core(x, uu, np.asarray(rho, dtype=float), params)
    return (1.0 - lam[..., None]) * kin + lam[..., None] * dyn


MODEL_NAMES = ("kinematic", "single-track", "tricycle", "blended")


def model_rhs(name: str):
    """Uniform rhs(x, u, rho, m0, ay, params, tires) for a named model."""
    if name == "tricycle":
        def rhs(x, u, rho, m0, ay, params, tires):
            return _tricycle_core(x, u, rho, m0, ay, params, tires, detail=False)
    elif name == "single-track":
        def rhs(x, u, rho, m0, ay, params, tires):
            return _single_track_core(x, u, rho, ay, params, tires, detail=False)
    elif name == "kinematic":
        def rhs(x, u, rho, m0, ay, params, tires):
            return _kinematic_core(x, u, rho, params)
    elif name == "blended":
        def rhs(x, u, rho, m0, ay, params, tires):
            lam = blend_factor(x[..., IDX_VX])
            dyn = _tricycle_core(x, u, rho, m0, ay, params, tires, detail=False)
            kin = _kinematic_core(x, u, rho, params)
            return (1.0 - lam[..., None]) * kin + lam[..., None] * dyn
    else:
        raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")
    return rhs
