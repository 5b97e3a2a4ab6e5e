"""Closed-loop scenario runner and open-loop model-comparison experiments.

The loop runs at a fixed tick rate: plant truth -> curvilinear conversion ->
longitudinal planner (own rate) -> path MPC (own rate) -> low-level throttle
and brake -> plant substeps. Everything is deterministic for a given
scenario; the seed only feeds optional measurement-noise hooks (off by
default).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .lowlevel import LowLevelConfig, PiState, ThrottleMap, longitudinal_tick
from .models import (
    IDX_D,
    IDX_DELTA,
    IDX_MU,
    IDX_N,
    IDX_R,
    IDX_S,
    IDX_VX,
    IDX_VY,
    STATE_DIM,
)
from .mpc import MpcConfig, MpcController, nonlinear_rollout
from .params import TireParams, VehicleParams
from .plant import PlantConfig, PlantState, plant_step, rpm_of, select_gear
from .planner import AccelLimits, LmpcConfig, LonPlan, SpeedProfile, lmpc_solve
from .track import Track, wrap_to_pi


@dataclass
class Scenario:
    track: Track
    profile: SpeedProfile
    limits: AccelLimits
    params: VehicleParams
    tires: TireParams
    mpc: MpcConfig = field(default_factory=MpcConfig)
    lmpc: LmpcConfig = field(default_factory=LmpcConfig)
    lowlevel: LowLevelConfig = field(default_factory=LowLevelConfig)
    plant: PlantConfig = field(default_factory=PlantConfig)
    throttle_map: ThrottleMap | None = None
    tick_dt: float = 0.01
    mpc_every: int = 4           # 25 Hz with the 10 ms tick
    lmpc_every: int = 5
    duration: float | None = None
    laps: int | None = 1
    s_start: float = 0.0
    v_start: float = 15.0
    seed: int = 0
    name: str = "scenario"


FIELDS = [
    "t", "x", "y", "psi", "vx", "vy", "r", "s", "n", "mu",
    "delta_cmd", "delta_act", "throttle", "brake", "D_cmd",
    "v_ref", "v_plan", "a_plan", "mpc_status", "mpc_cost", "mpc_iters",
    "mpc_time_ms", "m_diff", "m0_next", "gear", "rpm", "lap", "flags",
]


@dataclass
class Telemetry:
    rows: list[dict] = field(default_factory=list)
    terminated: str = "completed"
    lap_times: list[float] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=FIELDS)
            writer.writeheader()
            writer.writerows(self.rows)

    def save_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for row in self.rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def _initial_gear(speed: float, params: VehicleParams) -> int:
    for g in range(len(params.gear_ratios) - 1, -1, -1):
        if rpm_of(speed / params.r_w, g, params) <= 5600.0:
            return g
    return 0


def run_closed_loop(scn: Scenario) -> Telemetry:
    """Drive the plant around the track with the full controller stack."""
    track = scn.track
    params = scn.params
    tmap = scn.throttle_map or ThrottleMap.from_engine_curve()

    x0, y0, psi0 = track.curvilinear_to_cartesian((scn.s_start, 0.0, 0.0))
    gear0 = _initial_gear(scn.v_start, params)
    w0 = scn.v_start / params.r_w
    plant = PlantState(x=float(x0), y=float(y0), psi=float(psi0), vx=scn.v_start,
                       omega_axle=w0, omega_fl=w0, omega_fr=w0, gear=gear0)

    ctrl = MpcController(scn.mpc, track, params, scn.tires)
    pi_state = PiState()
    plan: LonPlan | None = None
    sol = None
    delta_cmd = 0.0
    d_cmd = 0.0
    seed_s = scn.s_start
    s_unwrapped = scn.s_start
    s_prev = scn.s_start
    lap_count = 0
    lap_start_t = 0.0
    L = track.total_length

    telem = Telemetry()
    n_ticks = int(round((scn.duration or 600.0) / scn.tick_dt))
    stage_times = np.arange(scn.mpc.T + 1) * scn.mpc.dt
    last_info = {"m_diff": 0.0, "rpm": rpm_of(plant.omega_axle, gear0, params),
                 "gear": gear0}

    for k in range(n_ticks):
        t = k * scn.tick_dt
        try:
            pose = track.cartesian_to_curvilinear(plant.x, plant.y, plant.psi,
                                                  seed_s=seed_s)
        except ValueError:
            telem.terminated = "off-track"
            break
        seed_s = pose.s
        ds = pose.s - s_prev
        if track.closed and ds < -0.5 * L:
            ds += L
        s_unwrapped += ds
        s_prev = pose.s
        if track.closed and s_unwrapped - scn.s_start >= (lap_count + 1) * L:
            lap_count += 1
            telem.lap_times.append(t - lap_start_t)
            lap_start_t = t
            if scn.laps is not None and lap_count >= scn.laps:
                telem.terminated = "completed"
                telem.rows.append(_row(t, plant, pose, delta_cmd, d_cmd, sol, plan,
                                       last_info, lap_count, ""))
                break

        wl, wr = track.width_at(pose.s)
        if pose.n > float(wl) + 2.0 or pose.n < -(float(wr) + 2.0):
            telem.terminated = "off-track"
            break

        flags = []
        x_hat = np.array([pose.s, pose.n, pose.mu, plant.vx, plant.vy, plant.r,
                          plant.delta_act, d_cmd])

        if k % scn.lmpc_every == 0:
            v_hat = max(plant.vx, 1.0)
            s_pred = pose.s + np.cumsum(np.full(scn.lmpc.T, v_hat * scn.lmpc.Ts))
            if plan is not None:
                s_pred = pose.s + np.cumsum(
                    np.maximum(plan.v[1:], 1.0) * scn.lmpc.Ts)
            rho_prev = np.asarray(track.curvature_at(s_pred), dtype=float)
            ay_caps = scn.limits.ay_cap(np.maximum(plan.v[1:], 1.0)) if plan is not None \
                else scn.limits.ay_cap(np.full(scn.lmpc.T, v_hat))
            plan = lmpc_solve(np.array([plant.vx, plant.ax_lag]), pose.s, rho_prev,
                              scn.profile, ay_caps, scn.limits, scn.lmpc, prev=plan)
            if plan.status.startswith("failed"):
                flags.append("lmpc-failed")

        if k % scn.mpc_every == 0:
            s_pred = ctrl.prev.states[:, IDX_S] if ctrl.prev is not None else \
                pose.s + stage_times * max(plant.vx, 1.0)
            v_prof = np.asarray(scn.profile.speed_at(s_pred), dtype=float)
            if plan is not None:
                v_plan = np.asarray(plan.speed_at_time(stage_times), dtype=float)
                v_ref = np.minimum(v_prof, v_plan)
            else:
                v_ref = v_prof
            sol = ctrl.tick(x_hat, v_ref)
            if sol.solver_status == "infeasible-softened":
                flags.append("mpc-failed")

        if sol is not None and sol.solver_status != "infeasible-softened":
            delta_cmd = float(np.clip(delta_cmd + sol.inputs[0, 0] * scn.tick_dt,
                                      -scn.mpc.delta_max, scn.mpc.delta_max))
            d_cmd = float(np.clip(d_cmd + sol.inputs[0, 1] * scn.tick_dt,
                                  scn.mpc.D_min, scn.mpc.D_max))
            v_ll = float(sol.states[1, IDX_VX])
        else:
            v_ll = plant.vx

        rpm = last_info["rpm"]
        throttle, brake, pi_state = longitudinal_tick(
            v_ll, d_cmd, plant.vx, plant.ax_lag, rpm, plant.gear, scn.tick_dt,
            pi_state, params, scn.tires, tmap, scn.lowlevel)
        if sol is not None and sol.solver_status == "infeasible-softened":
            throttle *= 0.5

        telem.rows.append(_row(t, plant, pose, delta_cmd, d_cmd, sol, plan,
                               last_info, lap_count, "|".join(flags)))
        try:
            plant, last_info = plant_step(plant, throttle, brake, delta_cmd,
                                          scn.tick_dt, params, scn.tires, scn.plant)
        except RuntimeError:
            telem.terminated = "plant-abort"
            break
    else:
        telem.terminated = "time-limit" if scn.laps is not None else "completed"
    return telem


def _row(t, plant: PlantState, pose, delta_cmd, d_cmd, sol, plan, info, lap, flags):
    return {
        "t": round(t, 9), "x": plant.x, "y": plant.y, "psi": plant.psi,
        "vx": plant.vx, "vy": plant.vy, "r": plant.r,
        "s": pose.s, "n": pose.n, "mu": pose.mu,
        "delta_cmd": delta_cmd, "delta_act": plant.delta_act,
        "throttle": plant.throttle, "brake": plant.brake, "D_cmd": d_cmd,
        "v_ref": float(sol.v_ref[0]) if sol is not None else 0.0,
        "v_plan": float(plan.v[1]) if plan is not None else 0.0,
        "a_plan": float(plan.a[1]) if plan is not None else 0.0,
        "mpc_status": sol.solver_status if sol is not None else "none",
        "mpc_cost": float(sol.cost) if sol is not None else 0.0,
        "mpc_iters": int(sol.diagnostics.get("iterations", 0)) if sol is not None else 0,
        "mpc_time_ms": float(sol.diagnostics.get("timing_ms", 0.0)) if sol is not None else 0.0,
        "m_diff": float(info.get("m_diff", 0.0)),
        "m0_next": float(sol.m0diff_schedule[0]) if sol is not None else 0.0,
        "gear": int(info.get("gear", 0)), "rpm": float(info.get("rpm", 0.0)),
        "lap": lap, "flags": flags,
    }


# -- open-loop model comparison ---------------------------------------------------


def record_plant_run(track: Track, params, tires, s0: float, v0: float,
                     delta_profile, throttle_profile, brake_profile,
                     duration: float, tick_dt: float = 0.01,
                     plant_cfg: PlantConfig | None = None):
    """Scripted plant run producing a truth trace for open-loop comparisons.

    The command profiles are callables of time.
    """
    x0, y0, psi0 = track.curvilinear_to_cartesian((s0, 0.0, 0.0))
    gear0 = _initial_gear(v0, params)
    w0 = v0 / params.r_w
    plant = PlantState(x=float(x0), y=float(y0), psi=float(psi0), vx=v0,
                       omega_axle=w0, omega_fl=w0, omega_fr=w0, gear=gear0)
    rows = []
    seed_s = s0
    n = int(round(duration / tick_dt))
    cfg = plant_cfg or PlantConfig()
    info = {"m_diff": 0.0}
    for k in range(n):
        t = k * tick_dt
        pose = track.cartesian_to_curvilinear(plant.x, plant.y, plant.psi, seed_s=seed_s)
        seed_s = pose.s
        rows.append({"t": t, "s": pose.s, "n": pose.n, "mu": pose.mu,
                     "vx": plant.vx, "vy": plant.vy, "r": plant.r,
                     "delta_act": plant.delta_act, "m_diff": info.get("m_diff", 0.0),
                     "throttle": plant.throttle, "brake": plant.brake})
        plant, info = plant_step(plant, float(throttle_profile(t)),
                                 float(brake_profile(t)), float(delta_profile(t)),
                                 tick_dt, params, tires, cfg)
    return rows


def run_open_loop_compare(model_names, truth_rows, track: Track,
                          params: VehicleParams, tires: TireParams,
                          horizon: float = 2.6, tick_dt: float = 0.01,
                          h: float = 0.002):
    """Roll each model under the truth's realized inputs; report errors.

    e_y/e_psi are lateral/heading differences to the truth trace at matched
    times; the report carries terminal and max absolute values (heading in
    degrees).
    """
    n = min(int(round(horizon / tick_dt)), len(truth_rows) - 1)
    delta = np.array([r["delta_act"] for r in truth_rows[: n + 1]])
    vx_tr = np.array([r["vx"] for r in truth_rows[: n + 1]])
    # realized rates drive the rate-input models
    ddelta = np.diff(delta) / tick_dt
    ax_tr = np.diff(vx_tr) / tick_dt
    d_cmd = np.concatenate([ax_tr, ax_tr[-1:]])
    dD = np.diff(d_cmd) / tick_dt
    inputs = np.column_stack([ddelta, dD])

    x0 = np.array([truth_rows[0]["s"], truth_rows[0]["n"], truth_rows[0]["mu"],
                   truth_rows[0]["vx"], truth_rows[0]["vy"], truth_rows[0]["r"],
                   truth_rows[0]["delta_act"], d_cmd[0]])
    n_truth = np.array([r["n"] for r in truth_rows[: n + 1]])
    mu_truth = np.array([r["mu"] for r in truth_rows[: n + 1]])

    report = {}
    for name in model_names:
        cfg = MpcConfig(T=n, dt=tick_dt, h=h, integrator="rk4", model=name)
        X = nonlinear_rollout(x0, inputs, track, cfg, params, tires)
        e_y = X[:, IDX_N] - n_truth
        e_psi = wrap_to_pi(X[:, IDX_MU] - mu_truth)
        report[name] = {
            "e_y_terminal": float(e_y[-1]),
            "e_y_max": float(np.max(np.abs(e_y))),
            "e_psi_terminal_deg": float(np.degrees(e_psi[-1])),
            "e_psi_max_deg": float(np.max(np.abs(np.degrees(e_psi)))),
        }
    return report


# -- metrics ----------------------------------------------------------------------


def compute_metrics(telem: Telemetry, segments: dict[str, tuple[float, float]] | None,
                    profile: SpeedProfile | None = None) -> dict:
    """Per-segment and overall tracking errors plus lap and adherence stats."""
    s = telem.column("s")
    e_y = np.abs(telem.column("n"))
    e_psi = np.abs(np.degrees(telem.column("mu")))
    out: dict = {"terminated": telem.terminated,
                 "lap_times": [float(v) for v in telem.lap_times],
                 "ticks": len(telem.rows)}
    def stats(mask):
        if not np.any(mask):
            return {"max_e_y": 0.0, "mean_e_y": 0.0, "max_e_psi_deg": 0.0,
                    "mean_e_psi_deg": 0.0, "count": 0}
        return {
            "max_e_y": float(np.max(e_y[mask])),
            "mean_e_y": float(np.mean(e_y[mask])),
            "max_e_psi_deg": float(np.max(e_psi[mask])),
            "mean_e_psi_deg": float(np.mean(e_psi[mask])),
            "count": int(np.sum(mask)),
        }

    out["overall"] = stats(np.ones_like(s, dtype=bool))
    out["segments"] = {}
    if segments:
        for name, (s_lo, s_hi) in segments.items():
            mask = (s >= s_lo) & (s < s_hi)
            out["segments"][name] = stats(mask)
    if profile is not None:
        v = telem.column("vx")
        out["speed_adherence_mean"] = float(np.mean(np.abs(v - profile.speed_at(s))))
    failures = [r for r in telem.rows if r["flags"]]
    out["flagged_ticks"] = len(failures)
    statuses = telem.column("mpc_status")
    out["mpc_failures"] = int(np.sum(statuses == "infeasible-softened"))
    if len(telem.rows):
        out["median_mpc_ms"] = float(np.median(telem.column("mpc_time_ms")))
    return out


def save_metrics(metrics: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
