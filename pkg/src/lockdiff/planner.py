"""Speed planning: offline lap profile and the online longitudinal LMPC.

The offline profile runs the classic three passes (lateral cap, forward
traction, backward braking) with the longitudinal budget shrunk by lateral
usage through the friction ellipse. The online planner is a double-integrator
LMPC on (speed, acceleration) with jerk input and preview-dependent bounds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .params import ConfigError
from .track import Track


@dataclass(frozen=True)
class AccelLimits:
    """Tabulated acceleration envelopes vs speed (vertical load only)."""

    vx_ay: np.ndarray
    ay_max: np.ndarray
    vx_ax: np.ndarray
    ax_max: np.ndarray
    ax_min: np.ndarray
    source: str = "synthetic default (no vehicle calibration published)"

    def __post_init__(self):
        if np.any(self.ay_max <= 0):
            raise ConfigError("ay_max table must be positive")
        if np.any(self.ax_max <= 0) or np.any(self.ax_min >= 0):
            raise ConfigError("ax_max must be positive and ax_min negative")

    @property
    def v_top(self) -> float:
        return float(min(self.vx_ay[-1], self.vx_ax[-1]))

    def ay_cap(self, vx):
        return np.interp(vx, self.vx_ay, self.ay_max)

    def ax_bounds(self, vx):
        return (np.interp(vx, self.vx_ax, self.ax_min),
                np.interp(vx, self.vx_ax, self.ax_max))


def load_limits(ay_path: str | Path, ax_path: str | Path) -> AccelLimits:
    """Read `vx,ay_max` and `vx,ax_max,ax_min` CSV tables."""
    def read(path, cols):
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"limits table not found: {path}")
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            names = [c.strip() for c in reader.fieldnames or []]
            for c in cols:
                if c not in names:
                    raise ConfigError(f"{path}: missing column {c!r}")
            rows = [[float(r[c]) for c in cols] for r in reader]
        arr = np.array(rows)
        if len(arr) < 2 or np.any(np.diff(arr[:, 0]) <= 0):
            raise ConfigError(f"{path}: vx column must be strictly increasing")
        return arr

    ay = read(ay_path, ["vx", "ay_max"])
    ax = read(ax_path, ["vx", "ax_max", "ax_min"])
    return AccelLimits(vx_ay=ay[:, 0], ay_max=ay[:, 1],
                       vx_ax=ax[:, 0], ax_max=ax[:, 1], ax_min=ax[:, 2])


@dataclass
class SpeedProfile:
    s: np.ndarray
    v: np.ndarray
    a: np.ndarray
    closed: bool = False

    def speed_at(self, s):
        if self.closed:
            s = np.mod(s, self.s[-1])
        return np.interp(s, self.s, self.v)

    def accel_at(self, s):
        if self.closed:
            s = np.mod(s, self.s[-1])
        return np.interp(s, self.s, self.a)

    def save(self, path: str | Path) -> None:
        data = np.column_stack([self.s, self.v, self.a])
        np.savetxt(path, data, delimiter=",", header="s,v,a", comments="", fmt="%.12g")

    @staticmethod
    def load(path: str | Path) -> "SpeedProfile":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"speed profile not found: {path}")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        s, v, a = data[:, 0], data[:, 1], data[:, 2]
        closed = bool(abs(v[0] - v[-1]) < 1e-9 and s[0] == 0.0)
        return SpeedProfile(s=s, v=v, a=a, closed=closed)


def friction_ellipse_bounds(vx_hat, ay_hat, limits: AccelLimits):
    """Longitudinal bounds shrunk by predicted lateral usage."""
    ay_cap = limits.ay_cap(vx_hat)
    scale = np.sqrt(np.clip(1.0 - (np.asarray(ay_hat, dtype=float) / ay_cap) ** 2,
                            0.0, None))
    ax_min, ax_max = limits.ax_bounds(vx_hat)
    return ax_min * scale, ax_max * scale


def _lateral_cap(rho, limits: AccelLimits):
    """Fixed point of v = min(v_top, sqrt(ay_max(v)/|rho|)), damped.

    A few undamped sweeps at the end push the residual of the speed-dependent
    cap well below the 1e-6 audit tolerance.
    """
    v = np.full_like(np.asarray(rho, dtype=float), limits.v_top)
    a_rho = np.maximum(np.abs(rho), 1e-9)
    straight = np.abs(rho) <= 1e-9

    def cap_of(vv):
        return np.where(straight, limits.v_top, np.sqrt(limits.ay_cap(vv) / a_rho))

    for _ in range(40):
        v_new = np.minimum(limits.v_top, 0.5 * v + 0.5 * cap_of(v))
        done = np.max(np.abs(v_new - v)) < 1e-10
        v = v_new
        if done:
            break
    for _ in range(4):
        v = np.minimum(limits.v_top, cap_of(v))
    return v


def generate_speed_profile(track: Track, limits: AccelLimits, ds: float = 2.0) -> SpeedProfile:
    """Lap-time-greedy speed profile satisfying the acceleration envelopes."""
    if ds <= 0:
        raise ConfigError("ds must be positive")
    L = track.total_length
    n = max(2, int(round(L / ds)) + 1)
    s = np.linspace(0.0, L, n)
    rho = np.asarray(track.curvature_at(s), dtype=float)
    dseg = np.diff(s)

    v = _lateral_cap(rho, limits)
    cap = v.copy()

    def ellipse_ax(vi, rho_i):
        ay_used = rho_i * vi * vi
        return friction_ellipse_bounds(vi, ay_used, limits)

    passes = 5 if track.closed else 1
    for _ in range(passes):
        v_before = v.copy()
        # forward: traction limit evaluated at the earlier sample
        for i in range(n - 1):
            _, ax_hi = ellipse_ax(v[i], rho[i])
            v[i + 1] = min(v[i + 1], np.sqrt(v[i] ** 2 + 2.0 * dseg[i] * max(ax_hi, 0.0)))
        if track.closed:
            v[0] = min(v[0], v[-1])
        # backward: braking limit, implicit in the earlier sample's speed
        for i in range(n - 2, -1, -1):
            vi = v[i]
            for _ in range(60):
                ax_lo, _ = ellipse_ax(min(vi, cap[i]), rho[i])
                v_allow = np.sqrt(max(v[i + 1] ** 2 - 2.0 * dseg[i] * min(ax_lo, 0.0), 0.0))
                vi_new = min(v[i], v_allow)
                if abs(vi_new - vi) < 1e-12:
                    vi = vi_new
                    break
                vi = vi_new
            v[i] = vi
        if track.closed:
            v[-1] = min(v[-1], v[0])
            if np.max(np.abs(v - v_before)) < 1e-4:
                break

    a = np.empty_like(v)
    a[:-1] = (v[1:] ** 2 - v[:-1] ** 2) / (2.0 * dseg)
    a[-1] = a[-2] if not track.closed else a[0]
    return SpeedProfile(s=s, v=v, a=a, closed=track.closed)


def audit_speed_profile(profile: SpeedProfile, track: Track, limits: AccelLimits,
                        tol: float = 1e-6) -> list[str]:
    """Independent pairwise check of the lateral and longitudinal constraints."""
    issues = []
    rho = np.asarray(track.curvature_at(profile.s), dtype=float)
    lat = profile.v ** 2 * np.abs(rho) - limits.ay_cap(profile.v)
    for i in np.nonzero(lat > tol)[0]:
        issues.append(f"lateral cap exceeded at s={profile.s[i]:.1f} by {lat[i]:.2e}")
    dv2 = profile.v[1:] ** 2 - profile.v[:-1] ** 2
    dss = np.diff(profile.s)
    acc = dv2 / (2.0 * dss)
    ax_lo, ax_hi = limits.ax_bounds(profile.v[:-1])
    for i in np.nonzero(acc > ax_hi + tol)[0]:
        issues.append(f"traction bound exceeded at s={profile.s[i]:.1f} by {acc[i]-ax_hi[i]:.2e}")
    for i in np.nonzero(acc < ax_lo - tol)[0]:
        issues.append(f"braking bound exceeded at s={profile.s[i]:.1f} by {ax_lo[i]-acc[i]:.2e}")
    return issues


# -- longitudinal LMPC -----------------------------------------------------------


@dataclass
class LmpcConfig:
    T: int = 50
    Ts: float = 0.05
    q_v: float = 8.0
    q_a: float = 0.4
    r_j: float = 0.02
    p_v: float = 16.0
    p_a: float = 0.8
    j_max: float = 60.0
    soft_weight: float = 1e4
    qp_eps: float = 3e-6


@dataclass
class LonPlan:
    v: np.ndarray                # (T+1,)
    a: np.ndarray                # (T+1,)
    j: np.ndarray                # (T,)
    Ts: float
    v_max: np.ndarray            # (T,) cap applied to states 1..T
    ax_lo: np.ndarray            # (T,) bounds applied to states 1..T
    ax_hi: np.ndarray
    slack: float = 0.0
    status: str = "solved"

    def speed_at_time(self, t):
        grid = np.arange(len(self.v)) * self.Ts
        return np.interp(t, grid, self.v)

    def accel_at_time(self, t):
        grid = np.arange(len(self.a)) * self.Ts
        return np.interp(t, grid, self.a)


def _condensed_double_integrator(T: int, Ts: float):
    A = np.array([[1.0, Ts], [0.0, 1.0]])
    Bv = np.array([0.5 * Ts * Ts, Ts])
    Sx = np.zeros((T + 1, 2, 2))
    Su = np.zeros((T + 1, 2, T))
    Sx[0] = np.eye(2)
    for t in range(T):
        Sx[t + 1] = A @ Sx[t]
        Su[t + 1] = A @ Su[t]
        Su[t + 1, :, t] = Bv
    return Sx, Su


def lmpc_solve(x_hat, s0: float, curvature_preview, profile: SpeedProfile,
               ay_cap, limits: AccelLimits, cfg: LmpcConfig,
               prev: LonPlan | None = None) -> LonPlan:
    """Plan (v, a, j) over the horizon tracking the offline profile.

    Velocity caps come from the per-stage lateral-acceleration budget and the
    curvature preview; longitudinal bounds from the friction ellipse using the
    previous plan's speeds (shifted, cold-started from the profile).
    """
    T, Ts = cfg.T, cfg.Ts
    rho = np.asarray(curvature_preview, dtype=float)
    if rho.shape != (T,):
        raise ConfigError(f"curvature preview must have length T={T}")
    ay_cap = np.broadcast_to(np.asarray(ay_cap, dtype=float), (T,))
    x0 = np.asarray(x_hat, dtype=float)

    # preview speeds for the ellipse: previous plan shifted, else the profile
    if prev is not None and len(prev.v) == T + 1:
        v_hat = np.concatenate([prev.v[2:], prev.v[-1:]])
    else:
        v_hat = None
    for _ in range(2 if v_hat is None else 1):
        if v_hat is None:
            v_hat = np.full(T, max(x0[0], 1.0))
        s_pred = s0 + np.cumsum(v_hat * Ts)
        v_prof = profile.speed_at(s_pred)
        if prev is None:
            v_hat = v_prof
    a_prof = profile.accel_at(s_pred)

    ay_hat = rho * v_hat ** 2
    ax_lo, ax_hi = friction_ellipse_bounds(v_hat, ay_hat, limits)
    v_max = np.minimum(limits.v_top,
                       np.sqrt(ay_cap / np.maximum(np.abs(rho), 1e-6)))
    v_ref = np.minimum(v_prof, v_max)
    a_ref = np.clip(a_prof, ax_lo, ax_hi)

    # Sparse multiple-shooting QP: z = [x_1..x_T (2T); j (T); sigma_v (T)].
    # Diagonal cost and a banded constraint matrix keep it well conditioned.
    Ad = np.array([[1.0, Ts], [0.0, 1.0]])
    Bd = np.array([0.5 * Ts * Ts, Ts])
    Wv = np.concatenate([np.full(T - 1, cfg.q_v), [cfg.p_v]])
    Wa = np.concatenate([np.full(T - 1, cfg.q_a), [cfg.p_a]])
    off_j = 2 * T
    off_s = 3 * T
    nz = 4 * T

    rows, cols, vals = [], [], []
    t_idx = np.arange(T)
    t1 = t_idx[1:]
    # dynamics: x_{t+1} - A x_t - B j_t = 0 (x_0 folded into the t=0 rhs)
    for comp in range(2):
        rows.append(2 * t_idx + comp)
        cols.append(2 * t_idx + comp)
        vals.append(np.ones(T))
    rows.append(2 * t1)                  # -1 on previous v
    cols.append(2 * (t1 - 1))
    vals.append(np.full(T - 1, -1.0))
    rows.append(2 * t1)                  # -Ts on previous a
    cols.append(2 * (t1 - 1) + 1)
    vals.append(np.full(T - 1, -Ts))
    rows.append(2 * t1 + 1)              # -1 on previous a
    cols.append(2 * (t1 - 1) + 1)
    vals.append(np.full(T - 1, -1.0))
    rows.append(2 * t_idx)
    cols.append(off_j + t_idx)
    vals.append(np.full(T, -Bd[0]))
    rows.append(2 * t_idx + 1)
    cols.append(off_j + t_idx)
    vals.append(np.full(T, -Bd[1]))
    row0 = 2 * T
    # v cap with slack
    rows.append(row0 + t_idx)
    cols.append(2 * t_idx)
    vals.append(np.ones(T))
    rows.append(row0 + t_idx)
    cols.append(off_s + t_idx)
    vals.append(-np.ones(T))
    row0 += T
    # accel bounds (hard)
    rows.append(row0 + t_idx)
    cols.append(2 * t_idx + 1)
    vals.append(np.ones(T))
    row0 += T
    # jerk box
    rows.append(row0 + t_idx)
    cols.append(off_j + t_idx)
    vals.append(np.ones(T))
    row0 += T
    # slack nonneg
    rows.append(row0 + t_idx)
    cols.append(off_s + t_idx)
    vals.append(np.ones(T))
    row0 += T

    A_mat = sp.csc_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(row0, nz))
    rhs0 = Ad @ x0
    l = np.concatenate([
        np.tile([0.0, 0.0], T), np.full(T, -np.inf), ax_lo,
        np.full(T, -cfg.j_max), np.zeros(T)])
    u = np.concatenate([
        np.tile([0.0, 0.0], T), v_max, ax_hi,
        np.full(T, cfg.j_max), np.full(T, np.inf)])
    l[0], l[1] = rhs0[0], rhs0[1]
    u[0], u[1] = rhs0[0], rhs0[1]

    p_diag = np.empty(nz)
    p_diag[0:2 * T:2] = 2.0 * Wv
    p_diag[1:2 * T:2] = 2.0 * Wa
    p_diag[off_j:off_s] = 2.0 * cfg.r_j
    p_diag[off_s:] = 2.0 * 1e2
    P = sp.diags(p_diag, format="csc")
    q = np.zeros(nz)
    q[0:2 * T:2] = -2.0 * Wv * v_ref
    q[1:2 * T:2] = -2.0 * Wa * a_ref
    q[off_s:] = cfg.soft_weight

    import osqp

    prob = osqp.OSQP()
    prob.setup(P, q, A_mat, l, u, verbose=False,
               eps_abs=cfg.qp_eps, eps_rel=cfg.qp_eps, max_iter=40000, polish=True)
    res = prob.solve()
    status = res.info.status
    if status not in ("solved", "solved inaccurate") or res.x is None:
        # degrade: zero jerk, flag
        j = np.zeros(T)
        status = f"failed:{status}"
        slack = 0.0
    else:
        j = np.clip(res.x[off_j:off_s], -cfg.j_max, cfg.j_max)
        slack = float(np.sum(np.maximum(res.x[off_s:], 0.0)))

    # exact recursion for the returned states
    v = np.empty(T + 1)
    a = np.empty(T + 1)
    v[0], a[0] = x0[0], x0[1]
    for t in range(T):
        v[t + 1] = v[t] + Ts * a[t] + 0.5 * Ts * Ts * j[t]
        a[t + 1] = a[t] + Ts * j[t]
    return LonPlan(v=v, a=a, j=j, Ts=Ts, v_max=v_max, ax_lo=ax_lo, ax_hi=ax_hi,
                   slack=slack, status=status)
