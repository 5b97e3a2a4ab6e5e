"""Fixed-step explicit integrators and integrator-stability analysis.

The stability test is the classical one: linearize the lateral dynamics
(vy, r) at a straight-running operating point, scale the eigenvalues by the
step size and ask whether the amplification polynomial of the method stays
inside the unit circle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .models import IDX_D, IDX_R, IDX_VX, IDX_VY, STATE_DIM, model_rhs
from .params import ConfigError, TireParams, VehicleParams

STABILITY_TOL = 1e-10


class IntegrationError(RuntimeError):
    """Non-finite derivative during stepping; carries the offending state."""

    def __init__(self, msg: str, state=None):
        super().__init__(msg)
        self.state = state


class IntegratorKind(str, Enum):
    EULER = "euler"
    RK4 = "rk4"


def amplification(kind: IntegratorKind, z):
    """Stability polynomial R(z) of the method."""
    z = np.asarray(z, dtype=complex)
    if kind == IntegratorKind.EULER:
        return 1.0 + z
    return 1.0 + z + z**2 / 2.0 + z**3 / 6.0 + z**4 / 24.0


def stability_region_contains(kind: IntegratorKind, z) -> bool:
    return bool(np.all(np.abs(amplification(kind, z)) <= 1.0 + STABILITY_TOL))


def step(f, x, u, h: float, kind: IntegratorKind):
    """One explicit step of x' = f(x, u) with u held constant."""
    if h <= 0:
        raise ConfigError(f"step size must be positive (got {h})")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if kind == IntegratorKind.EULER:
        k1 = f(x, u)
        out = x + h * k1
    else:
        k1 = f(x, u)
        k2 = f(x + 0.5 * h * k1, u)
        k3 = f(x + 0.5 * h * k2, u)
        k4 = f(x + h * k3, u)
        out = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite state after integration step", state=x)
    return out


def substep_count(dt: float, h: float) -> int:
    ratio = dt / h
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise ConfigError(f"dt/h must be a positive integer (dt={dt}, h={h})")
    return n


def micro_step(f, x, u, dt: float, h: float, kind: IntegratorKind):
    """Compose step() dt/h times; rejects non-integer ratios."""
    n = substep_count(dt, h)
    for _ in range(n):
        x = step(f, x, u, h, kind)
    return x


def linearize(f, x0, u0, nx: int | None = None, nu: int | None = None):
    """Jacobians (A, B) of f at (x0, u0) by central finite differences.

    Per-component step max(1e-6, 1e-6 |v_i|); state ordering is the CurvState
    field order.
    """
    x0 = np.asarray(x0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    nx = len(x0) if nx is None else nx
    nu = len(u0) if nu is None else nu
    f0 = np.asarray(f(x0, u0), dtype=float)
    A = np.empty((len(f0), nx))
    B = np.empty((len(f0), nu))
    for i in range(nx):
        k = max(1e-6, 1e-6 * abs(x0[i]))
        xp = x0.copy(); xp[i] += k
        xm = x0.copy(); xm[i] -= k
        A[:, i] = (np.asarray(f(xp, u0)) - np.asarray(f(xm, u0))) / (2.0 * k)
    for j in range(nu):
        k = max(1e-6, 1e-6 * abs(u0[j]))
        up = u0.copy(); up[j] += k
        um = u0.copy(); um[j] -= k
        B[:, j] = (np.asarray(f(x0, up)) - np.asarray(f(x0, um))) / (2.0 * k)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise IntegrationError("non-finite entries in finite-difference Jacobian", state=x0)
    return A, B


# -- model stability scan ------------------------------------------------------


@dataclass
class SpeedPoint:
    speed: float
    eigenvalues: list[complex]
    stable: bool
    margin: float
    indeterminate: bool = False


@dataclass
class StabilityReport:
    model: str
    method: str
    h: float
    points: list[SpeedPoint] = field(default_factory=list)

    @property
    def min_stable_speed(self) -> float | None:
        """Smallest scanned speed from which every faster point is stable."""
        best = None
        for p in reversed(self.points):
            if p.indeterminate or not p.stable:
                break
            best = p.speed
        return best

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "method": self.method,
            "h": self.h,
            "min_stable_speed": self.min_stable_speed,
            "points": [
                {
                    "speed": p.speed,
                    "eigenvalues": [[z.real, z.imag] for z in p.eigenvalues],
                    "stable": p.stable,
                    "margin": p.margin,
                    "indeterminate": p.indeterminate,
                }
                for p in self.points
            ],
        }


def equilibrium_state(speed: float, params: VehicleParams) -> np.ndarray:
    """Straight running at `speed` with D matched to drag + rolling."""
    x = np.zeros(STATE_DIM)
    x[IDX_VX] = speed
    x[IDX_D] = (float(params.drag_force(speed)) + float(params.rolling_force(speed))) / params.m
    return x


def lateral_jacobian(model: str, speed: float, params: VehicleParams,
                     tires: TireParams) -> np.ndarray:
    """2x2 Jacobian of (vy', r') wrt (vy, r) at the straight equilibrium."""
    rhs = model_rhs(model)
    x0 = equilibrium_state(speed, params)
    u0 = np.zeros(2)

    def f_lat(xl, _u):
        x = x0.copy()
        x[IDX_VY] = xl[0]
        x[IDX_R] = xl[1]
        dx = rhs(x, u0, 0.0, 0.0, 0.0, params, tires)
        return np.array([dx[IDX_VY], dx[IDX_R]])

    A, _ = linearize(f_lat, np.zeros(2), np.zeros(2))
    return A


def model_stability_scan(model: str, params: VehicleParams, tires: TireParams,
                         h: float, kind: IntegratorKind,
                         speeds) -> StabilityReport:
    report = StabilityReport(model=model, method=kind.value, h=h)
    rhs = model_rhs(model)
    for v in speeds:
        x0 = equilibrium_state(float(v), params)
        resid = abs(float(rhs(x0, np.zeros(2), 0.0, 0.0, 0.0, params, tires)[IDX_VX]))
        if resid > 1e-6:
            report.points.append(SpeedPoint(float(v), [], False, np.inf, indeterminate=True))
            continue
        try:
            A = lateral_jacobian(model, float(v), params, tires)
        except IntegrationError:
            report.points.append(SpeedPoint(float(v), [], False, np.inf, indeterminate=True))
            continue
        eig = np.linalg.eigvals(A)
        margin = float(np.max(np.abs(amplification(kind, eig * h))) - 1.0)
        report.points.append(SpeedPoint(float(v), list(eig), margin <= STABILITY_TOL,
                                        margin))
    return report


def divergence_check(model: str, speed: float, h: float, kind: IntegratorKind,
                     params: VehicleParams, tires: TireParams,
                     duration: float = 2.0, perturbation: float = 1e-3,
                     growth: float = 10.0) -> bool:
    """Simulate the nonlinear model from a perturbed equilibrium.

    Returns True when the (vy, r) deviation norm grows by `growth` (or blows
    up) within `duration` seconds under the fixed-step integrator.
    """
    rhs = model_rhs(model)
    x = equilibrium_state(speed, params)
    x[IDX_VY] += perturbation
    u = np.zeros(2)
    norm0 = perturbation
    steps = int(round(duration / h))

    def f(xx, uu):
        return rhs(xx, uu, 0.0, 0.0, 0.0, params, tires)

    for _ in range(steps):
        try:
            x = step(f, x, u, h, kind)
        except IntegrationError:
            return True
        dev = float(np.hypot(x[IDX_VY], x[IDX_R]))
        if not np.isfinite(dev) or dev >= growth * norm0:
            return True
    return False
