import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lockdiff.track import (
    CurvPose,
    DomainError,
    TrackError,
    load_track,
    make_circle_track,
    make_line_track,
    save_track,
    wrap_to_pi,
)


def write_csv(tmp_path, name, header, rows):
    path = tmp_path / name
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    return path


# -- loading ------------------------------------------------------------------


def test_quarter_circle_curvature(tmp_path):
    th = np.linspace(0.0, np.pi / 2, 4)
    rows = [(np.sin(t), 1.0 - np.cos(t), t, 3.0, 3.0) for t in th]
    path = write_csv(tmp_path, "quarter.csv", "x,y,psi,w_left,w_right", rows)
    track = load_track(path)
    # Interior samples only; the coarse sampling costs a few percent.
    assert track.kappa[1] == pytest.approx(1.0, rel=0.05)
    assert track.kappa[2] == pytest.approx(1.0, rel=0.05)


def test_straight_line_zero_curvature(tmp_path):
    rows = [(float(i), 0.0, 0.0, 4.0, 4.0) for i in range(10)]
    path = write_csv(tmp_path, "line.csv", "x,y,psi,w_left,w_right", rows)
    track = load_track(path)
    assert np.allclose(track.kappa, 0.0, atol=1e-12)
    assert track.total_length == pytest.approx(9.0)


def test_missing_column_named_in_error(tmp_path):
    path = write_csv(tmp_path, "bad.csv", "y,psi,w_left,w_right",
                     [(0.0, 0.0, 3.0, 3.0), (1.0, 0.0, 3.0, 3.0)])
    with pytest.raises(TrackError, match="'x'"):
        load_track(path)


def test_malformed_row_reports_line(tmp_path):
    path = write_csv(tmp_path, "mal.csv", "x,y,psi,w_left,w_right",
                     [(0.0, 0.0, 0.0, 3.0, 3.0), ("oops", 0.0, 0.0, 3.0, 3.0)])
    with pytest.raises(TrackError, match=":3"):
        load_track(path)


def test_repeated_points_rejected(tmp_path):
    path = write_csv(tmp_path, "rep.csv", "x,y,psi,w_left,w_right",
                     [(0.0, 0.0, 0.0, 3.0, 3.0), (0.0, 0.0, 0.0, 3.0, 3.0),
                      (1.0, 0.0, 0.0, 3.0, 3.0)])
    with pytest.raises(TrackError):
        load_track(path)


def test_save_load_roundtrip(tmp_path, circle_track):
    path = tmp_path / "circle.csv"
    save_track(circle_track, path)
    again = load_track(path)
    assert again.closed
    assert again.total_length == pytest.approx(circle_track.total_length, rel=1e-9)
    assert np.allclose(again.kappa, circle_track.kappa, atol=1e-9)


# -- curvature queries ----------------------------------------------------------


def test_curvature_constant_circle(circle_track):
    for s in (0.0, 10.0, 100.0, circle_track.total_length - 1.0):
        assert circle_track.curvature_at(s) == pytest.approx(1.0 / 30.0)


def test_curvature_wraps_on_closed_track(circle_track):
    L = circle_track.total_length
    assert circle_track.curvature_at(L + 1.0) == pytest.approx(circle_track.curvature_at(1.0))


def test_curvature_out_of_range_open(line_track):
    with pytest.raises(DomainError):
        line_track.curvature_at(line_track.total_length + 5.0)


def test_curvature_midpoint_interpolation():
    from lockdiff.track import Track

    s = np.array([0.0, 10.0])
    track = Track(s, s.copy(), np.zeros(2), np.zeros(2), np.array([0.0, 0.02]),
                  np.full(2, 4.0), np.full(2, 4.0), closed=False)
    assert track.curvature_at(5.0) == pytest.approx(0.01)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=0.0, max_value=10.0), st.floats(min_value=1e-9, max_value=1e-4))
def test_curvature_continuity(s, eps):
    from lockdiff.track import Track

    sv = np.array([0.0, 10.0])
    track = Track(sv, sv.copy(), np.zeros(2), np.zeros(2), np.array([0.0, 0.02]),
                  np.full(2, 4.0), np.full(2, 4.0), closed=False)
    if s + eps > track.total_length:
        s = track.total_length - eps
    a = track.curvature_at(s)
    b = track.curvature_at(s + eps)
    # Linear interpolation: Lipschitz constant is the sample slope 0.002/m.
    assert abs(a - b) <= 0.002 * eps + 1e-15


# -- conversions ----------------------------------------------------------------


def test_on_sample_identity(circle_track):
    k = 100
    pose = circle_track.cartesian_to_curvilinear(circle_track.x[k], circle_track.y[k],
                                                 circle_track.psi[k])
    assert pose.s == pytest.approx(circle_track.s[k], abs=1e-9)
    assert pose.n == pytest.approx(0.0, abs=1e-9)
    assert pose.mu == pytest.approx(0.0, abs=1e-9)


def test_left_offset_sign(line_track):
    pose = line_track.cartesian_to_curvilinear(50.0, 0.5, 0.0)
    assert pose.n == pytest.approx(0.5, abs=1e-12)
    assert pose.s == pytest.approx(50.0, abs=1e-9)


def test_curv_to_cart_straight_offset(line_track):
    x, y, psi = line_track.curvilinear_to_cartesian(CurvPose(s=20.0, n=1.5, mu=0.0))
    assert (x, y) == (pytest.approx(20.0), pytest.approx(1.5))
    assert psi == pytest.approx(0.0)


def test_roundtrip_cart_curv_cart_circle(circle_track, rng):
    for _ in range(100):
        s = rng.uniform(0.0, circle_track.total_length)
        n = rng.uniform(-3.0, 3.0)
        mu = rng.uniform(-0.5, 0.5)
        x, y, psi = circle_track.curvilinear_to_cartesian(CurvPose(s=s, n=n, mu=mu))
        pose = circle_track.cartesian_to_curvilinear(x, y, psi, seed_s=s)
        x2, y2, psi2 = circle_track.curvilinear_to_cartesian(pose)
        assert np.hypot(x2 - x, y2 - y) < 1e-6
        assert abs(wrap_to_pi(psi2 - psi)) < 1e-8


def test_projection_matches_analytic_circle(circle_track, rng):
    # Centerline: unit-speed circle of radius 30 centered at (0, 30).
    R = 30.0
    for _ in range(50):
        s = rng.uniform(1.0, circle_track.total_length - 1.0)
        n = rng.uniform(-2.0, 2.0)
        th = s / R
        x = (R - n) * np.sin(th)
        y = R - (R - n) * np.cos(th)
        pose = circle_track.cartesian_to_curvilinear(x, y, th)
        assert pose.s == pytest.approx(s, abs=2e-4)
        assert pose.n == pytest.approx(n, abs=2e-5)
        assert pose.mu == pytest.approx(0.0, abs=1e-5)


def test_seeded_matches_global(circle_track, rng):
    for _ in range(20):
        s = rng.uniform(0.0, circle_track.total_length)
        x, y, psi = circle_track.curvilinear_to_cartesian(CurvPose(s=s, n=1.0, mu=0.1))
        a = circle_track.cartesian_to_curvilinear(x, y, psi)
        b = circle_track.cartesian_to_curvilinear(x, y, psi, seed_s=s - 3.0)
        assert a.s == pytest.approx(b.s, abs=1e-9)
        assert a.n == pytest.approx(b.n, abs=1e-9)


def test_resample_preserves_length(circle_track):
    finer = circle_track.resample(ds=0.02)
    assert abs(finer.total_length - circle_track.total_length) < 1e-3 * circle_track.total_length


def test_closed_track_wrap_continuity(circle_track):
    x0, y0 = circle_track.position_at(0.0)
    xL, yL = circle_track.position_at(circle_track.total_length)
    assert np.hypot(xL - x0, yL - y0) < 1e-9
