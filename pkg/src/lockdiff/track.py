"""Arc-length-parameterized track centerlines and frame conversions.

The centerline is treated as a polyline between samples: positions are linear
in s inside a segment and lateral offsets are measured along the segment
normal. That makes cartesian<->curvilinear conversion an exact inverse pair
at any sampling density; accuracy against the true smooth curve is set by the
sampling step of the file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

REQUIRED_COLUMNS = ("x", "y", "psi", "w_left", "w_right")
CLOSURE_TOL = 1e-6


class TrackError(ValueError):
    """Malformed track file or invalid geometry."""


class DomainError(ValueError):
    """Query outside the parameterized range of an open track."""


class ProjectionError(ValueError):
    """Point too far from the centerline to project."""


@dataclass(frozen=True)
class TrackSample:
    s: float
    x: float
    y: float
    psi: float
    kappa: float
    w_left: float
    w_right: float


@dataclass(frozen=True)
class CurvPose:
    s: float
    n: float
    mu: float
    ambiguous: bool = False


def wrap_to_pi(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


class Track:
    """Immutable centerline with curvature and lane widths.

    Safe for concurrent reads; projection seeding is caller-owned state.
    """

    def __init__(self, s, x, y, psi, kappa, w_left, w_right, closed: bool):
        self.s = np.asarray(s, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.psi = np.asarray(psi, dtype=float)
        self.kappa = np.asarray(kappa, dtype=float)
        self.w_left = np.asarray(w_left, dtype=float)
        self.w_right = np.asarray(w_right, dtype=float)
        self.closed = closed
        self._validate()
        self.total_length = float(self.s[-1])
        # Unwrapped heading for interpolation across +-pi.
        self._psi_unwrapped = np.unwrap(self.psi)
        # Per-segment tangents/normals (n positive to the left).
        dx = np.diff(self.x)
        dy = np.diff(self.y)
        seg_len = np.hypot(dx, dy)
        self._seg_tx = dx / seg_len
        self._seg_ty = dy / seg_len
        self._seg_len = seg_len

    def _validate(self) -> None:
        if self.s.ndim != 1 or len(self.s) < 2:
            raise TrackError("track needs at least two samples")
        ds = np.diff(self.s)
        if np.any(ds <= 0):
            bad = int(np.argmax(ds <= 0))
            raise TrackError(f"s must be strictly increasing (violated after sample {bad})")
        if np.any(np.hypot(np.diff(self.x), np.diff(self.y)) <= 0):
            raise TrackError("repeated centerline points")
        if not np.all(np.isfinite(self.kappa)):
            raise TrackError("non-finite curvature")
        if np.any(self.w_left <= 0) or np.any(self.w_right <= 0):
            raise TrackError("lane widths must be positive")
        if self.closed:
            scale = max(1.0, float(self.s[-1]))
            gap = float(np.hypot(self.x[-1] - self.x[0], self.y[-1] - self.y[0]))
            if gap > CLOSURE_TOL * scale:
                raise TrackError(f"closed track does not wrap (endpoint gap {gap:.3e} m)")
            if abs(float(wrap_to_pi(self.psi[-1] - self.psi[0]))) > 1e-4:
                raise TrackError("closed track heading does not wrap")

    # -- sampling -----------------------------------------------------------

    def samples(self) -> list[TrackSample]:
        return [TrackSample(*row) for row in zip(self.s, self.x, self.y, self.psi,
                                                 self.kappa, self.w_left, self.w_right)]

    def _wrap_s(self, s):
        s = np.asarray(s, dtype=float)
        if self.closed:
            return np.mod(s, self.total_length)
        lo, hi = 0.0, self.total_length
        tol = 1e-9 * max(1.0, hi)
        if np.any(s < lo - tol) or np.any(s > hi + tol):
            raise DomainError(f"s outside [0, {hi:.3f}] on an open track")
        return np.clip(s, lo, hi)

    def curvature_at(self, s):
        """Signed curvature, linear interpolation in s (wraps when closed)."""
        return np.interp(self._wrap_s(s), self.s, self.kappa)

    def heading_at(self, s):
        return wrap_to_pi(np.interp(self._wrap_s(s), self.s, self._psi_unwrapped))

    def width_at(self, s):
        sw = self._wrap_s(s)
        return (np.interp(sw, self.s, self.w_left), np.interp(sw, self.s, self.w_right))

    def position_at(self, s):
        sw = self._wrap_s(s)
        return (np.interp(sw, self.s, self.x), np.interp(sw, self.s, self.y))

    # -- conversions --------------------------------------------------------

    def _heading_unwrapped_at(self, s):
        return np.interp(self._wrap_s(s), self.s, self._psi_unwrapped)

    def curvilinear_to_cartesian(self, pose: CurvPose | tuple):
        """Map (s, n, mu) to (x, y, psi).

        Offsets go along the normal of the interpolated heading, which is the
        exact inverse of cartesian_to_curvilinear's projection.
        """
        if isinstance(pose, CurvPose):
            s, n, mu = pose.s, pose.n, pose.mu
        else:
            s, n, mu = pose
        cx, cy = self.position_at(s)
        psi_c = self._heading_unwrapped_at(s)
        x = cx - n * np.sin(psi_c)
        y = cy + n * np.cos(psi_c)
        psi = wrap_to_pi(psi_c + mu)
        return (float(x) if np.ndim(x) == 0 else x,
                float(y) if np.ndim(y) == 0 else y,
                float(psi) if np.ndim(psi) == 0 else psi)

    def _tangency_residual(self, s, px, py):
        """(p - c(s)) . t(s); zero where p projects orthogonally onto s."""
        cx, cy = self.position_at(s)
        psi_c = self._heading_unwrapped_at(s)
        return (px - cx) * np.cos(psi_c) + (py - cy) * np.sin(psi_c)

    def _candidate_feet(self, px, py, seed_s: float | None):
        """Clamped per-segment foot points (polyline distance) to seed the root."""
        nseg = len(self._seg_len)
        if seed_s is not None:
            idx0 = int(np.clip(np.searchsorted(self.s, self._wrap_s(seed_s), side="right") - 1,
                               0, nseg - 1))
            window = max(5, int(np.ceil(20.0 / float(np.min(self._seg_len)))))
            cand = np.arange(idx0 - window, idx0 + window + 1)
            cand = np.unique(np.mod(cand, nseg) if self.closed else np.clip(cand, 0, nseg - 1))
        else:
            cand = np.arange(nseg)
        ax, ay = self.x[cand], self.y[cand]
        tx, ty, ln = self._seg_tx[cand], self._seg_ty[cand], self._seg_len[cand]
        t = np.clip(((px - ax) * tx + (py - ay) * ty) / ln, 0.0, 1.0)
        fx = ax + t * tx * ln
        fy = ay + t * ty * ln
        d2 = (px - fx) ** 2 + (py - fy) ** 2
        s_feet = self.s[cand] + t * (self.s[cand + 1] - self.s[cand])
        return cand, s_feet, np.sqrt(d2)

    def cartesian_to_curvilinear(self, x: float, y: float, psi: float,
                                 seed_s: float | None = None) -> CurvPose:
        """Project a pose onto the centerline.

        A seed restricts the search to nearby segments (meant for 100 Hz use);
        without one every segment is tested. Two distinct minima closer than
        1e-3 m pick the smaller s and set the ambiguity flag. The seeded foot
        is refined to the root of the orthogonality condition so the result
        inverts curvilinear_to_cartesian exactly.
        """
        cand, s_feet, dist = self._candidate_feet(x, y, seed_s)
        order = np.argsort(dist)
        best = int(order[0])
        ambiguous = False
        for j in order[1:]:
            gap = abs(int(cand[j]) - int(cand[best]))
            if self.closed:
                gap = min(gap, len(self._seg_len) - gap)
            if gap <= 1:
                continue
            if dist[j] - dist[best] < 1e-3:
                ambiguous = True
                if s_feet[j] < s_feet[best]:
                    best = int(j)
            break

        s_star = self._refine_projection(float(s_feet[best]), x, y)
        cx, cy = self.position_at(s_star)
        psi_c = float(self._heading_unwrapped_at(s_star))
        n = float(-(x - cx) * np.sin(psi_c) + (y - cy) * np.cos(psi_c))

        wl, wr = self.width_at(s_star)
        if abs(n) > max(float(wl), float(wr)) + 5.0:
            raise ProjectionError(f"pose ({x:.1f}, {y:.1f}) is {abs(n):.1f} m off the centerline")
        kappa = float(self.curvature_at(s_star))
        if abs(n * kappa) >= 1.0:
            raise ProjectionError("pose beyond the centerline's center of curvature")
        mu = float(wrap_to_pi(psi - psi_c))
        return CurvPose(s=s_star, n=n, mu=mu, ambiguous=ambiguous)

    def _refine_projection(self, s0: float, px: float, py: float) -> float:
        """Bisect (p - c(s)) . t(s) = 0 around the polyline foot s0."""
        ds = float(np.max(self._seg_len))
        lo, hi = s0 - ds, s0 + ds
        if not self.closed:
            lo = max(lo, 0.0)
            hi = min(hi, self.total_length)
        g_lo = self._tangency_residual(lo, px, py)
        g_hi = self._tangency_residual(hi, px, py)
        for _ in range(6):
            if g_lo > 0.0 >= g_hi or g_lo >= 0.0 > g_hi:
                break
            if g_lo < 0.0:
                lo -= ds
                if not self.closed and lo <= 0.0:
                    lo = 0.0
                    g_lo = self._tangency_residual(lo, px, py)
                    break
                g_lo = self._tangency_residual(lo, px, py)
            if g_hi > 0.0:
                hi += ds
                if not self.closed and hi >= self.total_length:
                    hi = self.total_length
                    g_hi = self._tangency_residual(hi, px, py)
                    break
                g_hi = self._tangency_residual(hi, px, py)
        if g_lo < 0.0 and g_hi < 0.0:
            return float(self._wrap_s(hi)) if self.closed else min(hi, self.total_length)
        if g_lo > 0.0 and g_hi > 0.0:
            return float(self._wrap_s(lo)) if self.closed else max(lo, 0.0)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            g_mid = self._tangency_residual(mid, px, py)
            if g_mid > 0.0:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-12 * max(1.0, self.total_length):
                break
        s_star = 0.5 * (lo + hi)
        return float(self._wrap_s(s_star)) if self.closed else float(np.clip(s_star, 0.0, self.total_length))

    def resample(self, ds: float) -> "Track":
        """New track re-sampled at (approximately) uniform ds."""
        n_pts = max(2, int(round(self.total_length / ds)) + 1)
        s_new = np.linspace(0.0, self.total_length, n_pts)
        x = np.interp(s_new, self.s, self.x)
        y = np.interp(s_new, self.s, self.y)
        psi = wrap_to_pi(np.interp(s_new, self.s, self._psi_unwrapped))
        kap = np.interp(s_new, self.s, self.kappa)
        wl = np.interp(s_new, self.s, self.w_left)
        wr = np.interp(s_new, self.s, self.w_right)
        s_chord = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(x), np.diff(y)))])
        return Track(s_chord, x, y, psi, kap, wl, wr, closed=self.closed)


# -- ingestion ---------------------------------------------------------------


def _three_point_curvature(x: np.ndarray, y: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Signed curvature through consecutive point triples (circumcircle form).

    Exact for samples on a circle at any spacing; endpoints copy their
    neighbor (one-sided stencil).
    """
    ax, ay = x[:-2], y[:-2]
    bx, by = x[1:-1], y[1:-1]
    cx, cy = x[2:], y[2:]
    cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx)
    d_ab = np.hypot(bx - ax, by - ay)
    d_bc = np.hypot(cx - bx, cy - by)
    d_ac = np.hypot(cx - ax, cy - ay)
    denom = d_ab * d_bc * d_ac
    denom = np.where(denom < 1e-12, 1.0, denom)
    kappa = np.empty_like(x)
    kappa[1:-1] = 2.0 * cross / denom
    kappa[0] = kappa[1]
    kappa[-1] = kappa[-2]
    return kappa


def load_track(path: str | Path) -> Track:
    """Load a `s,x,y,psi,kappa,w_left,w_right` CSV (s and kappa optional)."""
    path = Path(path)
    if not path.exists():
        raise TrackError(f"track file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise TrackError(f"{path}: empty file")
        cols = [c.strip() for c in reader.fieldnames]
        for col in REQUIRED_COLUMNS:
            if col not in cols:
                raise TrackError(f"{path}: missing required column {col!r}")
        has_s = "s" in cols
        has_kappa = "kappa" in cols
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append({k: float(row[k]) for k in cols if row.get(k) not in (None, "")})
            except (TypeError, ValueError) as exc:
                raise TrackError(f"{path}:{lineno}: malformed row ({exc})") from None
    if len(rows) < 2:
        raise TrackError(f"{path}: needs at least two samples")

    x = np.array([r["x"] for r in rows])
    y = np.array([r["y"] for r in rows])
    psi = np.array([r["psi"] for r in rows])
    wl = np.array([r["w_left"] for r in rows])
    wr = np.array([r["w_right"] for r in rows])
    if has_s and all("s" in r for r in rows):
        s = np.array([r["s"] for r in rows])
    else:
        s = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(x), np.diff(y)))])
    if has_kappa and all("kappa" in r for r in rows):
        kappa = np.array([r["kappa"] for r in rows])
    else:
        kappa = _three_point_curvature(x, y, s)

    gap = float(np.hypot(x[-1] - x[0], y[-1] - y[0]))
    closed = gap <= CLOSURE_TOL * max(1.0, float(s[-1]))
    return Track(s, x, y, psi, kappa, wl, wr, closed=closed)


def save_track(track: Track, path: str | Path) -> None:
    path = Path(path)
    header = "s,x,y,psi,kappa,w_left,w_right"
    data = np.column_stack([track.s, track.x, track.y, track.psi,
                            track.kappa, track.w_left, track.w_right])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.12g")


# -- synthetic geometry ------------------------------------------------------


def make_line_track(length: float = 500.0, ds: float = 1.0, width: float = 5.0) -> Track:
    n = int(round(length / ds)) + 1
    s = np.linspace(0.0, length, n)
    return Track(s, s.copy(), np.zeros(n), np.zeros(n), np.zeros(n),
                 np.full(n, width), np.full(n, width), closed=False)


def make_circle_track(radius: float = 30.0, ds: float = 0.05, width: float = 5.0,
                      closed: bool = True, arc: float = 2.0 * np.pi) -> Track:
    length = radius * arc
    n = int(round(length / ds)) + 1
    s = np.linspace(0.0, length, n)
    th = s / radius
    x = radius * np.sin(th)
    y = radius * (1.0 - np.cos(th))
    psi = wrap_to_pi(th)
    kappa = np.full(n, 1.0 / radius)
    return Track(s, x, y, psi, kappa, np.full(n, width), np.full(n, width), closed=closed)


def make_track_from_arcs(segments, ds: float = 1.0, width: float = 6.0,
                         close: bool = False) -> Track:
    """Chain (length, curvature) pieces into a track.

    `segments` is a list of (length_m, kappa_1pm) tuples, positive kappa
    turning left. With close=True the caller is responsible for choosing
    segments that return to the start pose; the closing gap is distributed
    over the last segment.
    """
    xs, ys, psis, kaps, ss = [0.0], [0.0], [0.0], [], [0.0]
    x = y = psi = s = 0.0
    for length, kap in segments:
        n = max(2, int(round(length / ds)) + 1)
        step = length / (n - 1)
        for _ in range(n - 1):
            if abs(kap) < 1e-12:
                x += step * np.cos(psi)
                y += step * np.sin(psi)
            else:
                dpsi = kap * step
                chord = 2.0 / kap * np.sin(dpsi / 2.0)
                x += chord * np.cos(psi + dpsi / 2.0)
                y += chord * np.sin(psi + dpsi / 2.0)
                psi += dpsi
            s += step
            xs.append(x)
            ys.append(y)
            psis.append(psi)
            ss.append(s)
        kaps.extend([kap] * 0)
    s_arr = np.array(ss)
    x_arr = np.array(xs)
    y_arr = np.array(ys)
    psi_arr = np.array(psis)
    if close:
        # Blend the tail back onto the start pose to absorb numerical drift.
        gap_x = x_arr[-1] - x_arr[0]
        gap_y = y_arr[-1] - y_arr[0]
        w = np.clip((s_arr - 0.7 * s_arr[-1]) / (0.3 * s_arr[-1]), 0.0, 1.0)
        x_arr = x_arr - w * gap_x
        y_arr = y_arr - w * gap_y
        x_arr[-1] = x_arr[0]
        y_arr[-1] = y_arr[0]
        psi_arr = np.unwrap(psi_arr)
        psi_gap = psi_arr[-1] - psi_arr[0] - 2.0 * np.pi * round((psi_arr[-1] - psi_arr[0]) / (2.0 * np.pi))
        psi_arr = psi_arr - w * psi_gap
        s_arr = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(x_arr), np.diff(y_arr)))])
    kappa = _three_point_curvature(x_arr, y_arr, s_arr)
    n = len(s_arr)
    return Track(s_arr, x_arr, y_arr, wrap_to_pi(psi_arr), kappa,
                 np.full(n, width), np.full(n, width), closed=close)
