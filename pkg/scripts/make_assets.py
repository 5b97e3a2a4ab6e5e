#!/usr/bin/env python3
"""Regenerate the data assets shipped with the package.

Writes the Monza-like closed test track (geometry chosen so the arc segments
close exactly: chicane R=25, two medium R=70 corners, a wide R=250 parabolic
turn and a long back straight), the named segment ranges, and the default
throttle map inverted from the synthetic engine curve.
"""

import json
from pathlib import Path

import numpy as np

from lockdiff.lowlevel import ThrottleMap
from lockdiff.track import load_track, make_track_from_arcs, save_track

DATA = Path(__file__).resolve().parents[1] / "src" / "lockdiff" / "data"


def monza_like_segments():
    """Arc chain that closes exactly: net heading +2 pi, endpoint at origin."""
    r_chi, r_med, r_par = 25.0, 70.0, 250.0
    th_chi = np.pi / 3.0
    start, mid, link, final = 150.0, 15.0, 100.0, 150.0
    # chicane displacement (left then right, net heading zero)
    chi_dx = 2.0 * r_chi * np.sin(th_chi) + mid * np.cos(th_chi)
    chi_dy = 2.0 * r_chi * (1.0 - np.cos(th_chi)) + mid * np.sin(th_chi)
    # the y extent must equal the 180-degree parabolic diameter
    back = 2.0 * r_par - 2.0 * r_med - chi_dy
    # the top straight returns x past the origin by `final`
    top = start + chi_dx + link + final
    return [
        (start, 0.0),                      # start straight
        (r_chi * th_chi, +1.0 / r_chi),    # chicane left
        (mid, 0.0),
        (r_chi * th_chi, -1.0 / r_chi),    # chicane right
        (link, 0.0),
        (r_med * np.pi / 2.0, +1.0 / r_med),   # medium corner 1
        (back, 0.0),                       # back straight
        (r_med * np.pi / 2.0, +1.0 / r_med),   # medium corner 2
        (top, 0.0),                        # top straight
        (r_par * np.pi, +1.0 / r_par),     # parabolic 180
        (final, 0.0),                      # finish straight
    ]


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    track = make_track_from_arcs(monza_like_segments(), ds=1.0, width=6.0, close=True)
    save_track(track, DATA / "track_monza_like.csv")
    print(f"track: L = {track.total_length:.1f} m, closed = {track.closed}")

    s = 0.0
    bounds = []
    for length, _ in monza_like_segments():
        bounds.append((s, s + length))
        s += length
    segments = {
        "Chicane": [bounds[1][0], bounds[3][1]],
        "Corner1": [bounds[5][0], bounds[5][1]],
        "BackStraight": [bounds[6][0], bounds[6][1]],
        "Corner2": [bounds[7][0], bounds[7][1]],
        "TopStraight": [bounds[8][0], bounds[8][1]],
        "Parabolica": [bounds[9][0], bounds[9][1]],
        "FinishStraight": [bounds[10][0], bounds[10][1]],
        "StartStraight": [0.0, bounds[0][1]],
    }
    with open(DATA / "track_monza_like_segments.json", "w") as fh:
        json.dump(segments, fh, indent=2)
    print("segments:", ", ".join(segments))

    tmap = ThrottleMap.from_engine_curve()
    tmap.save(DATA / "throttle_map.csv")
    print("throttle map saved")

    reloaded = load_track(DATA / "track_monza_like.csv")
    assert reloaded.closed, "generated track must close"


if __name__ == "__main__":
    main()
