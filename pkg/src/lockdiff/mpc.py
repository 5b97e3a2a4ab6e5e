"""Path-tracking MPC over the curvilinear vehicle models.

Iterated linearization (real-time-iteration flavor): each pass linearizes the
micro-stepped stage map about the current trajectory by finite differences,
builds a sparse multiple-shooting QP (states + inputs + L1 slack variables)
and re-solves. The differential yaw moment and lateral-acceleration context
of every stage come from the previous solution and stay fixed through the
solve, so the model progression is an independent per-stage parameter rather
than an extra optimization variable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .models import (
    IDX_D,
    IDX_DELTA,
    IDX_MU,
    IDX_N,
    IDX_R,
    IDX_S,
    IDX_VX,
    IDX_VY,
    INPUT_DIM,
    STATE_DIM,
    CurvState,
    model_rhs,
)
from .numerics import IntegratorKind, substep_count
from .params import ConfigError, TireParams, VehicleParams
from .track import Track


@dataclass
class MpcConfig:
    T: int = 65                      # stages; horizon = T dt = 2.6 s
    dt: float = 0.04                 # stage length [s]
    h: float = 0.008                 # micro-step [s]; dt/h must be integer
    integrator: IntegratorKind = IntegratorKind.EULER
    model: str = "tricycle"          # tricycle | single-track | blended
    # cost weights
    q_n: float = 20.0
    q_mu: float = 30.0
    q_v: float = 2.0
    q_r: float = 1.0
    q_B: float = 10.0
    r_ddelta: float = 5.0
    r_dD: float = 0.05
    # physical input box A = [delta; D]
    delta_max: float = 0.35
    D_min: float = -18.0
    D_max: float = 12.0
    # rate box U = [ddelta; dD]
    ddelta_max: float = 0.8
    dD_max: float = 40.0
    # track bound softening
    n_margin: float = 0.9            # half width of the car plus safety
    soft_weight: float = 1e4
    # friction ellipse (vehicle-level accelerations)
    ellipse_ax_max: float = 16.0
    ellipse_ay_max: float = 24.0
    # solver
    sqp_iters: int = 3
    tol: float = 1e-4                # step-norm convergence
    qp_eps: float = 1e-6

    def __post_init__(self):
        self.n_sub = substep_count(self.dt, self.h)
        weights = [self.q_n, self.q_mu, self.q_v, self.q_r, self.q_B,
                   self.r_ddelta, self.r_dD]
        if any(w < 0 for w in weights):
            raise ConfigError("MPC weights must be nonnegative")
        if isinstance(self.integrator, str):
            self.integrator = IntegratorKind(self.integrator)

    @property
    def horizon(self) -> float:
        return self.T * self.dt


@dataclass
class MpcSolution:
    states: np.ndarray               # (T+1, 8)
    inputs: np.ndarray               # (T, 2)
    m0diff_schedule: np.ndarray      # (T,)
    ay_schedule: np.ndarray          # (T,)
    cost: float
    solver_status: str               # converged | max_iter | infeasible-softened
    slack_track: np.ndarray          # (T,)
    slack_ellipse: np.ndarray        # (T,)
    v_ref: np.ndarray                # (T+1,)
    diagnostics: dict = field(default_factory=dict)


@dataclass
class ViolationReport:
    max_defect: float                # per-stage re-simulation defect, inf-norm
    defect_per_state: np.ndarray     # (8,)
    max_track_violation: float
    max_ellipse_violation: float
    max_input_violation: float


# -- trajectory helpers -------------------------------------------------------


def cold_start_solution(x_hat, cfg: MpcConfig) -> MpcSolution:
    """Constant-velocity rollout used as `prev` on the first tick."""
    x = np.asarray(x_hat, dtype=float)
    states = np.tile(x, (cfg.T + 1, 1))
    states[:, IDX_S] = x[IDX_S] + np.arange(cfg.T + 1) * x[IDX_VX] * cfg.dt
    inputs = np.zeros((cfg.T, INPUT_DIM))
    return MpcSolution(states=states, inputs=inputs,
                       m0diff_schedule=np.zeros(cfg.T), ay_schedule=np.zeros(cfg.T),
                       cost=0.0, solver_status="cold-start",
                       slack_track=np.zeros(cfg.T), slack_ellipse=np.zeros(cfg.T),
                       v_ref=np.full(cfg.T + 1, x[IDX_VX]))


def shift_solution(prev: MpcSolution, x_hat, cfg: MpcConfig):
    """Warm start: drop the first stage, repeat the last, pin x0 to x_hat."""
    X = np.vstack([prev.states[1:], prev.states[-1:]])
    X[0] = np.asarray(x_hat, dtype=float)
    U = np.vstack([prev.inputs[1:], prev.inputs[-1:]])
    return X, U


def precompute_m0diff(prev: MpcSolution, params: VehicleParams, tires: TireParams,
                      cfg: MpcConfig):
    """Per-stage (M0_diff, ay) from the previous horizon, shifted one stage.

    Two fixed-point passes make the load-transfer context self-consistent
    with the yaw moment it produces.
    """
    from .models import tricycle_detail

    X = np.vstack([prev.states[1:], prev.states[-1:]])[: cfg.T]
    U = np.zeros((cfg.T, INPUT_DIM))
    ay = X[:, IDX_VX] * X[:, IDX_R]
    m0 = np.zeros(cfg.T)
    for _ in range(2):
        _, det = tricycle_detail(X, U, np.zeros(cfg.T), m0, params, tires, ay=ay)
        m0 = np.asarray(det["m_diff"], dtype=float)
        ay = np.asarray(det["ay_next"], dtype=float)
    return m0, ay


def evaluate_cost(states, inputs, refs, cfg: MpcConfig, params: VehicleParams) -> float:
    """Nonlinear stage cost summed over the horizon (x0 included)."""
    X = np.asarray(states, dtype=float)
    U = np.asarray(inputs, dtype=float)
    vref = np.asarray(refs, dtype=float)
    vx_safe = np.maximum(X[:, IDX_VX], 1e-3)
    alpha_r = np.arctan((X[:, IDX_VY] - params.lr * X[:, IDX_R]) / vx_safe)
    j_state = (cfg.q_n * X[:, IDX_N] ** 2
               + cfg.q_mu * X[:, IDX_MU] ** 2
               + cfg.q_v * (X[:, IDX_VX] - vref) ** 2
               + cfg.q_r * X[:, IDX_R] ** 2
               + cfg.q_B * alpha_r ** 2)
    j_input = cfg.r_ddelta * U[:, 0] ** 2 + cfg.r_dD * U[:, 1] ** 2
    return float(np.sum(j_state) + np.sum(j_input))


# -- stage linearization --------------------------------------------------------


def _micro_map_batch(rhs, X, U, rho, m0, ay, cfg: MpcConfig, params, tires):
    """Micro-stepped stage map applied to a (..., 8) batch."""
    x = X
    if cfg.integrator == IntegratorKind.EULER:
        for _ in range(cfg.n_sub):
            x = x + cfg.h * rhs(x, U, rho, m0, ay, params, tires)
    else:
        for _ in range(cfg.n_sub):
            k1 = rhs(x, U, rho, m0, ay, params, tires)
            k2 = rhs(x + 0.5 * cfg.h * k1, U, rho, m0, ay, params, tires)
            k3 = rhs(x + 0.5 * cfg.h * k2, U, rho, m0, ay, params, tires)
            k4 = rhs(x + cfg.h * k3, U, rho, m0, ay, params, tires)
            x = x + (cfg.h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def linearize_stages(X, U, rho, m0, ay, cfg: MpcConfig, params, tires):
    """Finite-difference (A_d, B_d, c_d) of the micro-stepped map, all stages.

    Perturbations for every stage run through the integrator as one batch.
    """
    rhs = model_rhs(cfg.model)
    T = X.shape[0]
    npert = 1 + 2 * (STATE_DIM + INPUT_DIM)
    Xb = np.repeat(X[:, None, :], npert, axis=1)
    Ub = np.repeat(U[:, None, :], npert, axis=1)
    kx = np.maximum(1e-6, 1e-6 * np.abs(X))
    ku = np.maximum(1e-6, 1e-6 * np.abs(U))
    for i in range(STATE_DIM):
        Xb[:, 1 + 2 * i, i] += kx[:, i]
        Xb[:, 2 + 2 * i, i] -= kx[:, i]
    for j in range(INPUT_DIM):
        Ub[:, 1 + 2 * STATE_DIM + 2 * j, j] += ku[:, j]
        Ub[:, 2 + 2 * STATE_DIM + 2 * j, j] -= ku[:, j]
    Phi = _micro_map_batch(rhs, Xb, Ub, rho[:, None], m0[:, None], ay[:, None],
                           cfg, params, tires)
    A = np.empty((T, STATE_DIM, STATE_DIM))
    B = np.empty((T, STATE_DIM, INPUT_DIM))
    for i in range(STATE_DIM):
        A[:, :, i] = (Phi[:, 1 + 2 * i] - Phi[:, 2 + 2 * i]) / (2.0 * kx[:, i])[:, None]
    for j in range(INPUT_DIM):
        base = 1 + 2 * STATE_DIM + 2 * j
        B[:, :, j] = (Phi[:, base] - Phi[:, base + 1]) / (2.0 * ku[:, j])[:, None]
    c = Phi[:, 0] - np.einsum("tij,tj->ti", A, X) - np.einsum("tij,tj->ti", B, U)
    bad = ~np.isfinite(A).all(axis=(1, 2)) | ~np.isfinite(B).all(axis=(1, 2)) \
        | ~np.isfinite(c).all(axis=1)
    return A, B, c, Phi[:, 0], bad


def discretize_stage(x_lin, u_lin, rho_t: float, m0diff_t: float, cfg: MpcConfig,
                     params: VehicleParams, tires: TireParams, ay_t: float = 0.0):
    """(A_d, B_d, c_d) of the micro-stepped map about one stage point."""
    x = x_lin.as_array() if isinstance(x_lin, CurvState) else np.asarray(x_lin, dtype=float)
    u = u_lin.as_array() if isinstance(u_lin, CurvState) else np.asarray(u_lin, dtype=float)
    A, B, c, _, bad = linearize_stages(x[None, :], u[None, :], np.array([rho_t]),
                                       np.array([m0diff_t]), np.array([ay_t]),
                                       cfg, params, tires)
    if bad[0]:
        raise ConfigError("non-finite Jacobian in stage linearization")
    return A[0], B[0], c[0]


# -- QP assembly ------------------------------------------------------------------


def _alpha_r_gradient(X, params):
    vx = np.maximum(X[:, IDX_VX], 1e-3)
    w = (X[:, IDX_VY] - params.lr * X[:, IDX_R]) / vx
    denom = 1.0 + w * w
    g = np.zeros((X.shape[0], STATE_DIM))
    g[:, IDX_VY] = 1.0 / (vx * denom)
    g[:, IDX_R] = -params.lr / (vx * denom)
    g[:, IDX_VX] = -w / (vx * denom)
    alpha = np.arctan(w)
    return alpha, g


def _ellipse_terms(X, cfg):
    ax2 = cfg.ellipse_ax_max ** 2
    ay2 = cfg.ellipse_ay_max ** 2
    vx, r, D = X[:, IDX_VX], X[:, IDX_R], X[:, IDX_D]
    e = D * D / ax2 + (vx * r) ** 2 / ay2 - 1.0
    g = np.zeros((X.shape[0], STATE_DIM))
    g[:, IDX_D] = 2.0 * D / ax2
    g[:, IDX_VX] = 2.0 * vx * r * r / ay2
    g[:, IDX_R] = 2.0 * vx * vx * r / ay2
    return e, g


class _QpProblem:
    """Sparse multiple-shooting QP: z = [x_1..x_T, u_0..u_{T-1}, s_tr, s_el].

    The sparsity pattern is fixed by the horizon, so the CSC structure and
    the permutation from assembly order into CSC data order are computed
    once; every solve only refreshes value arrays and vectors.
    """

    def __init__(self, cfg: MpcConfig):
        self.cfg = cfg
        T = cfg.T
        self.nx_blk = STATE_DIM * T
        self.off_u = self.nx_blk
        self.off_str = self.nx_blk + INPUT_DIM * T
        self.off_sel = self.off_str + T
        self.nz = self.off_sel + T
        self._prob = None
        self._build_pattern()

    @staticmethod
    def _csc_template(rows, cols, shape):
        """CSC (indices, indptr, perm) with perm mapping assembly->data order."""
        nnz = len(rows)
        coo = sp.coo_matrix((np.arange(1, nnz + 1, dtype=float), (rows, cols)),
                            shape=shape)
        csc = coo.tocsc()
        perm = csc.data.astype(np.int64) - 1
        return csc.indices.copy(), csc.indptr.copy(), perm

    def _build_pattern(self):
        cfg = self.cfg
        T = cfg.T
        t_idx = np.arange(T)
        rows, cols = [], []

        # dynamics equalities: I x_{t+1} - A_t x_t - B_t u_t = c_t
        eye = np.arange(STATE_DIM)
        blk = STATE_DIM * t_idx
        rows.append((blk[:, None] + eye).ravel())
        cols.append((blk[:, None] + eye).ravel())
        bi, bj = np.divmod(np.arange(STATE_DIM * INPUT_DIM), INPUT_DIM)
        rows.append((blk[:, None] + bi).ravel())
        cols.append((self.off_u + INPUT_DIM * t_idx[:, None] + bj).ravel())
        ai, aj = np.divmod(np.arange(STATE_DIM * STATE_DIM), STATE_DIM)
        blk1 = STATE_DIM * t_idx[1:]
        rows.append((blk1[:, None] + ai).ravel())
        cols.append((STATE_DIM * (t_idx[1:] - 1)[:, None] + aj).ravel())
        row0 = STATE_DIM * T

        # rate box U
        idx = np.arange(INPUT_DIM * T)
        rows.append(row0 + idx)
        cols.append(self.off_u + idx)
        row0 += INPUT_DIM * T

        # physical box on (delta, D)
        rows.append(row0 + 2 * t_idx)
        cols.append(STATE_DIM * t_idx + IDX_DELTA)
        rows.append(row0 + 2 * t_idx + 1)
        cols.append(STATE_DIM * t_idx + IDX_D)
        row0 += 2 * T

        # softened track bounds
        rows.append(row0 + 2 * t_idx)
        cols.append(STATE_DIM * t_idx + IDX_N)
        rows.append(row0 + 2 * t_idx)
        cols.append(self.off_str + t_idx)
        rows.append(row0 + 2 * t_idx + 1)
        cols.append(STATE_DIM * t_idx + IDX_N)
        rows.append(row0 + 2 * t_idx + 1)
        cols.append(self.off_str + t_idx)
        row0 += 2 * T

        # slack nonnegativity
        idx = np.arange(2 * T)
        rows.append(row0 + idx)
        cols.append(self.off_str + idx)
        row0 += 2 * T

        # linearized friction ellipse
        for comp in (IDX_VX, IDX_R, IDX_D):
            rows.append(row0 + t_idx)
            cols.append(STATE_DIM * t_idx + comp)
        rows.append(row0 + t_idx)
        cols.append(self.off_sel + t_idx)
        row0 += T

        self.m_rows = row0
        a_rows = np.concatenate(rows)
        a_cols = np.concatenate(cols)
        self._a_indices, self._a_indptr, self._a_perm = self._csc_template(
            a_rows, a_cols, (self.m_rows, self.nz))

        # P pattern (upper triangle): per-stage dense state blocks + diagonals.
        pi, pj = np.triu_indices(STATE_DIM)
        p_rows = [(STATE_DIM * t_idx[:, None] + pi).ravel()]
        p_cols = [(STATE_DIM * t_idx[:, None] + pj).ravel()]
        diag = np.arange(self.off_u, self.nz)
        p_rows.append(diag)
        p_cols.append(diag)
        self._p_triu_ij = (pi, pj)
        self._p_indices, self._p_indptr, self._p_perm = self._csc_template(
            np.concatenate(p_rows), np.concatenate(p_cols), (self.nz, self.nz))

    def build(self, A, B, phi, X_lin, U_lin, vref, nl, nr, params):
        """QP data in deviation variables about the linearization trajectory.

        z holds (dx, du, slacks) with x = x_lin + dx; keeping the data small
        and centered is what lets the ADMM solver converge in tens of
        iterations instead of thousands.
        """
        cfg = self.cfg
        T = cfg.T
        X1 = X_lin[1:]

        e_val, e_grad = _ellipse_terms(X1, cfg)
        a_vals = np.concatenate([
            np.ones(STATE_DIM * T),              # identity on dx_{t+1}
            (-B).reshape(-1),                    # -B_t
            (-A[1:]).reshape(-1),                # -A_t, t >= 1
            np.ones(INPUT_DIM * T),              # rate box
            np.ones(T), np.ones(T),              # physical box
            np.ones(T), -np.ones(T),             # track upper + slack
            -np.ones(T), -np.ones(T),            # track lower + slack
            np.ones(2 * T),                      # slack nonneg
            e_grad[:, IDX_VX], e_grad[:, IDX_R], e_grad[:, IDX_D],
            -np.ones(T),                         # ellipse slack
        ])

        l = np.empty(self.m_rows)
        u = np.empty(self.m_rows)
        # dynamics defects: dx_{t+1} - A dx_t - B du_t = phi_t - x_lin_{t+1}
        d = phi - X1
        l[: STATE_DIM * T] = d.ravel()
        u[: STATE_DIM * T] = d.ravel()
        row = STATE_DIM * T
        lo = np.tile([-cfg.ddelta_max, -cfg.dD_max], T) - U_lin.ravel()
        hi = np.tile([cfg.ddelta_max, cfg.dD_max], T) - U_lin.ravel()
        l[row: row + 2 * T] = lo
        u[row: row + 2 * T] = hi
        row += 2 * T
        l[row: row + 2 * T: 2] = -cfg.delta_max - X1[:, IDX_DELTA]
        u[row: row + 2 * T: 2] = cfg.delta_max - X1[:, IDX_DELTA]
        l[row + 1: row + 2 * T: 2] = cfg.D_min - X1[:, IDX_D]
        u[row + 1: row + 2 * T: 2] = cfg.D_max - X1[:, IDX_D]
        row += 2 * T
        l[row: row + 2 * T] = -np.inf
        u[row: row + 2 * T: 2] = nl - X1[:, IDX_N]
        u[row + 1: row + 2 * T: 2] = nr + X1[:, IDX_N]
        row += 2 * T
        l[row: row + 2 * T] = 0.0
        u[row: row + 2 * T] = np.inf
        row += 2 * T
        l[row: row + T] = -np.inf
        u[row: row + T] = -e_val
        row += T

        # cost about the linearization point
        alpha, g_alpha = _alpha_r_gradient(X1, params)
        w_diag = np.zeros(STATE_DIM)
        w_diag[IDX_N] = cfg.q_n
        w_diag[IDX_MU] = cfg.q_mu
        w_diag[IDX_VX] = cfg.q_v
        w_diag[IDX_R] = cfg.q_r
        P_blocks = np.zeros((T, STATE_DIM, STATE_DIM))
        P_blocks[:] = np.diag(2.0 * w_diag)
        P_blocks += 2.0 * cfg.q_B * np.einsum("ti,tj->tij", g_alpha, g_alpha)
        pi, pj = self._p_triu_ij
        p_vals = np.concatenate([
            P_blocks[:, pi, pj].reshape(-1),
            np.tile([2.0 * cfg.r_ddelta, 2.0 * cfg.r_dD], T),
            np.zeros(2 * T),
        ])

        q = np.zeros(self.nz)
        qx = 2.0 * np.zeros_like(X1)
        qx[:, IDX_N] = 2.0 * cfg.q_n * X1[:, IDX_N]
        qx[:, IDX_MU] = 2.0 * cfg.q_mu * X1[:, IDX_MU]
        qx[:, IDX_VX] = 2.0 * cfg.q_v * (X1[:, IDX_VX] - vref)
        qx[:, IDX_R] = 2.0 * cfg.q_r * X1[:, IDX_R]
        qx += 2.0 * cfg.q_B * alpha[:, None] * g_alpha
        q[: self.nx_blk] = qx.reshape(-1)
        q[self.off_u: self.off_str] = (2.0 * np.array([cfg.r_ddelta, cfg.r_dD])
                                       * U_lin).ravel()
        q[self.off_str:] = cfg.soft_weight
        return p_vals, q, a_vals, l, u

    def _as_matrices(self, p_vals, a_vals):
        P = sp.csc_matrix((p_vals[self._p_perm], self._p_indices, self._p_indptr),
                          shape=(self.nz, self.nz))
        A = sp.csc_matrix((a_vals[self._a_perm], self._a_indices, self._a_indptr),
                          shape=(self.m_rows, self.nz))
        return P, A

    def solve(self, p_vals, q, a_vals, l, u, warm=None):
        # Fresh setup every solve: OSQP computes its scaling from the current
        # data, which matters far more than the symbolic-factorization reuse
        # (a stale scaling can push braking-transient solves to thousands of
        # ADMM iterations).
        import osqp

        P, A = self._as_matrices(p_vals, a_vals)
        prob = osqp.OSQP()
        prob.setup(P, q, A, l, u, verbose=False,
                   eps_abs=self.cfg.qp_eps, eps_rel=self.cfg.qp_eps,
                   max_iter=20000, polish=True)
        if warm is not None:
            prob.warm_start(x=warm[0], y=warm[1])
        res = prob.solve()
        status = res.info.status
        ok = status in ("solved", "solved inaccurate")
        return ok, res.x, res.y, status


# -- solve ---------------------------------------------------------------------


def _sample_refs(track: Track, X, cfg: MpcConfig):
    s = X[:, IDX_S]
    rho = np.asarray(track.curvature_at(s), dtype=float)
    wl, wr = track.width_at(s)
    nl = np.asarray(wl, dtype=float) - cfg.n_margin
    nr = np.asarray(wr, dtype=float) - cfg.n_margin
    return rho, np.maximum(nl, 0.05), np.maximum(nr, 0.05)


def solve(x_hat, track: Track, v_ref, prev: MpcSolution | None, cfg: MpcConfig,
          params: VehicleParams, tires: TireParams,
          qp: "_QpProblem | None" = None) -> MpcSolution:
    """Iterated linearize-and-solve path-tracking MPC step."""
    t_start = time.perf_counter()
    x0 = x_hat.as_array() if isinstance(x_hat, CurvState) else np.asarray(x_hat, dtype=float)
    if prev is None or prev.states.shape[0] != cfg.T + 1:
        prev = cold_start_solution(x0, cfg)
    vref = np.asarray(v_ref, dtype=float)
    if vref.ndim == 0:
        vref = np.full(cfg.T + 1, float(vref))
    if len(vref) == cfg.T:
        vref = np.concatenate([vref, vref[-1:]])

    X_lin, U_lin = shift_solution(prev, x0, cfg)
    m0, ay = precompute_m0diff(prev, params, tires, cfg)

    if qp is None:
        qp = _QpProblem(cfg)
    best = None
    best_merit = np.inf
    converged = False
    warm = None
    step_norm = np.inf
    iters_done = 0
    qp_status = "n/a"

    for it in range(cfg.sqp_iters):
        rho_stage = np.asarray(track.curvature_at(X_lin[:-1, IDX_S]), dtype=float)
        _, nl, nr = _sample_refs(track, X_lin[1:], cfg)
        A, B, c, _, bad = linearize_stages(X_lin[:-1], U_lin, rho_stage, m0, ay,
                                           cfg, params, tires)
        if bad.any():
            break
        p_vals, q, a_vals, l_vec, u_vec = qp.build(x0, A, B, c, X_lin[1:], vref[1:],
                                                    nl, nr, params)
        ok, z, y_dual, qp_status = qp.solve(p_vals, q, a_vals, l_vec, u_vec, warm)
        iters_done = it + 1
        if not ok or z is None or not np.all(np.isfinite(z)):
            break
        warm = (z, y_dual)
        X_new = np.vstack([x0, z[: qp.nx_blk].reshape(cfg.T, STATE_DIM)])
        U_new = z[qp.off_u: qp.off_str].reshape(cfg.T, INPUT_DIM)
        s_tr = z[qp.off_str: qp.off_sel]
        s_el = z[qp.off_sel:]
        step_norm = float(np.max(np.abs(U_new - U_lin)))

        merit = (evaluate_cost(X_new, U_new, vref, cfg, params)
                 + cfg.soft_weight * (float(np.sum(np.maximum(s_tr, 0.0)))
                                      + float(np.sum(np.maximum(s_el, 0.0)))))
        if merit < best_merit:
            best_merit = merit
            best = (X_new.copy(), U_new.copy(), s_tr.copy(), s_el.copy())
        X_lin, U_lin = X_new, U_new
        if step_norm < cfg.tol:
            converged = True
            break
    status = "converged" if converged else "max_iter"
    if best is None:
        # Safe degradation: reuse the shifted previous solution.
        X_f, U_f = shift_solution(prev, x0, cfg)
        sol = MpcSolution(states=X_f, inputs=U_f, m0diff_schedule=m0, ay_schedule=ay,
                          cost=evaluate_cost(X_f, U_f, vref, cfg, params),
                          solver_status="infeasible-softened",
                          slack_track=np.zeros(cfg.T), slack_ellipse=np.zeros(cfg.T),
                          v_ref=vref,
                          diagnostics={"iterations": iters_done, "qp_status": qp_status,
                                       "timing_ms": (time.perf_counter() - t_start) * 1e3,
                                       "step_norm": step_norm})
        return sol

    X_f, U_f, s_tr, s_el = best
    # Hard boxes exactly: clip rates, then the integrated (delta, D) rows.
    U_f[:, 0] = np.clip(U_f[:, 0], -cfg.ddelta_max, cfg.ddelta_max)
    U_f[:, 1] = np.clip(U_f[:, 1], -cfg.dD_max, cfg.dD_max)
    X_f[1:, IDX_DELTA] = np.clip(X_f[1:, IDX_DELTA], -cfg.delta_max, cfg.delta_max)
    X_f[1:, IDX_D] = np.clip(X_f[1:, IDX_D], cfg.D_min, cfg.D_max)

    return MpcSolution(
        states=X_f, inputs=U_f, m0diff_schedule=m0, ay_schedule=ay,
        cost=evaluate_cost(X_f, U_f, vref, cfg, params),
        solver_status=status, slack_track=s_tr, slack_ellipse=s_el, v_ref=vref,
        diagnostics={"iterations": iters_done, "qp_status": qp_status,
                     "timing_ms": (time.perf_counter() - t_start) * 1e3,
                     "step_norm": step_norm})


class MpcController:
    """Stateful wrapper: shift-warm-started solves with a persistent QP."""

    def __init__(self, cfg: MpcConfig, track: Track, params: VehicleParams,
                 tires: TireParams):
        self.cfg = cfg
        self.track = track
        self.params = params
        self.tires = tires
        self.prev: MpcSolution | None = None
        self._qp = _QpProblem(cfg)

    def tick(self, x_hat, v_ref) -> MpcSolution:
        sol = solve(x_hat, self.track, v_ref, self.prev, self.cfg,
                    self.params, self.tires, qp=self._qp)
        if sol.solver_status != "infeasible-softened":
            self.prev = sol
        return sol

    def reset(self) -> None:
        self.prev = None
        self._qp = _QpProblem(self.cfg)


def nonlinear_rollout(x0, inputs, track: Track, cfg: MpcConfig,
                      params: VehicleParams, tires: TireParams,
                      m0=None, ay=None) -> np.ndarray:
    """Sequential micro-stepped rollout of an input sequence (shared path).

    Stage context (m0, ay) defaults to self-consistent per-stage updates from
    the previous stage's evaluation, mirroring the plant-side lag.
    """
    from .models import tricycle_detail

    rhs = model_rhs(cfg.model)
    T = len(inputs)
    X = np.empty((T + 1, STATE_DIM))
    X[0] = np.asarray(x0, dtype=float)
    m0_t = 0.0
    ay_t = 0.0
    for t in range(T):
        rho_t = float(track.curvature_at(X[t, IDX_S]))
        m0_c = float(m0[t]) if m0 is not None else m0_t
        ay_c = float(ay[t]) if ay is not None else ay_t
        X[t + 1] = _micro_map_batch(rhs, X[t], np.asarray(inputs[t], dtype=float),
                                    rho_t, m0_c, ay_c, cfg, params, tires)
        if m0 is None and cfg.model in ("tricycle", "blended"):
            _, det = tricycle_detail(X[t + 1], np.zeros(INPUT_DIM), rho_t, m0_c,
                                     params, tires, ay=ay_c)
            m0_t = float(det["m_diff"])
            ay_t = float(det["ay_next"])
    return X


def check_solution(sol: MpcSolution, track: Track, cfg: MpcConfig,
                   params: VehicleParams, tires: TireParams) -> ViolationReport:
    """Re-simulate the inputs through the nonlinear micro-stepped model."""
    rhs = model_rhs(cfg.model)
    T = cfg.T
    rho_stage = np.asarray(track.curvature_at(sol.states[:-1, IDX_S]), dtype=float)
    Phi = _micro_map_batch(rhs, sol.states[:-1], sol.inputs, rho_stage,
                           sol.m0diff_schedule, sol.ay_schedule, cfg, params, tires)
    defect = np.abs(sol.states[1:] - Phi)
    _, nl, nr = _sample_refs(track, sol.states[1:], cfg)
    tr_viol = np.maximum(sol.states[1:, IDX_N] - nl, 0.0)
    tr_viol = np.maximum(tr_viol, np.maximum(-sol.states[1:, IDX_N] - nr, 0.0))
    e_val, _ = _ellipse_terms(sol.states[1:], cfg)
    in_viol = max(
        float(np.max(np.abs(sol.inputs[:, 0]) - cfg.ddelta_max, initial=-np.inf)),
        float(np.max(np.abs(sol.inputs[:, 1]) - cfg.dD_max, initial=-np.inf)),
        float(np.max(np.abs(sol.states[1:, IDX_DELTA]) - cfg.delta_max, initial=-np.inf)),
        float(np.max(sol.states[1:, IDX_D] - cfg.D_max, initial=-np.inf)),
        float(np.max(cfg.D_min - sol.states[1:, IDX_D], initial=-np.inf)),
    )
    return ViolationReport(
        max_defect=float(np.max(defect)),
        defect_per_state=np.max(defect, axis=0),
        max_track_violation=float(np.max(tr_viol)),
        max_ellipse_violation=float(np.max(np.maximum(e_val, 0.0))),
        max_input_violation=in_viol,
    )
