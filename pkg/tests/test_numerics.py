import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lockdiff.models import IDX_MU, IDX_N, IDX_VX, CurvState, kinematic_derivative
from lockdiff.numerics import (
    IntegrationError,
    IntegratorKind,
    amplification,
    divergence_check,
    lateral_jacobian,
    linearize,
    micro_step,
    model_stability_scan,
    stability_region_contains,
    step,
)
from lockdiff.params import ConfigError


def decay(x, u):
    return -x


# -- step -------------------------------------------------------------------


def test_step_zero_field_identity():
    x = np.array([1.0, -2.0, 3.0])
    out = step(lambda x_, u_: np.zeros_like(x_), x, np.zeros(1), 0.1, IntegratorKind.RK4)
    assert np.array_equal(out, x)


def test_step_exponential_euler():
    out = step(decay, np.array([1.0]), np.zeros(1), 0.1, IntegratorKind.EULER)
    assert out[0] == pytest.approx(0.9, abs=1e-15)


def test_step_exponential_rk4():
    out = step(decay, np.array([1.0]), np.zeros(1), 0.1, IntegratorKind.RK4)
    assert out[0] == pytest.approx(0.9048375, abs=1e-10)


def global_error(kind, h):
    x = np.array([1.0])
    n = int(round(1.0 / h))
    for _ in range(n):
        x = step(decay, x, np.zeros(1), h, kind)
    return abs(float(x[0]) - np.exp(-1.0))


def test_euler_order_one():
    e1 = global_error(IntegratorKind.EULER, 0.01)
    e2 = global_error(IntegratorKind.EULER, 0.005)
    assert e1 / e2 == pytest.approx(2.0, rel=0.05)


def test_rk4_order_four():
    e1 = global_error(IntegratorKind.RK4, 0.02)
    e2 = global_error(IntegratorKind.RK4, 0.01)
    assert e1 / e2 == pytest.approx(16.0, rel=0.10)


def test_step_rejects_nonfinite():
    with pytest.raises(IntegrationError):
        step(lambda x_, u_: np.array([np.inf]), np.array([1.0]), np.zeros(1), 0.1,
             IntegratorKind.EULER)


# -- micro_step ----------------------------------------------------------------


def test_micro_step_single_equals_step():
    x = np.array([1.0])
    a = micro_step(decay, x, np.zeros(1), 0.04, 0.04, IntegratorKind.RK4)
    b = step(decay, x, np.zeros(1), 0.04, IntegratorKind.RK4)
    assert np.array_equal(a, b)


def test_micro_step_matches_manual_chain():
    x = np.array([1.0])
    a = micro_step(decay, x, np.zeros(1), 0.040, 0.008, IntegratorKind.RK4)
    b = x
    for _ in range(5):
        b = step(decay, b, np.zeros(1), 0.008, IntegratorKind.RK4)
    assert np.array_equal(a, b)


def test_micro_step_rejects_non_divisor():
    with pytest.raises(ConfigError):
        micro_step(decay, np.array([1.0]), np.zeros(1), 0.040, 0.007, IntegratorKind.EULER)


# -- linearize -------------------------------------------------------------------


def test_linearize_recovers_linear_system(rng):
    A = rng.normal(size=(4, 4))
    B = rng.normal(size=(4, 2))

    def f(x, u):
        return A @ x + B @ u

    Ah, Bh = linearize(f, rng.normal(size=4), rng.normal(size=2))
    assert np.allclose(Ah, A, rtol=1e-6, atol=1e-6)
    assert np.allclose(Bh, B, rtol=1e-6, atol=1e-6)


def test_linearize_kinematic_dn_dmu(vehicle):
    x0 = CurvState(vx=12.0).as_array()

    def f(x, u):
        return kinematic_derivative(x, u, 0.0, vehicle)

    A, _ = linearize(f, x0, np.zeros(2))
    assert A[IDX_N, IDX_MU] == pytest.approx(12.0, rel=1e-6)


def test_blended_jacobian_below_floor(vehicle, tires):
    A_blend = lateral_jacobian("blended", 2.0, vehicle, tires)
    A_kin = lateral_jacobian("kinematic", 2.0, vehicle, tires)
    assert np.allclose(A_blend, A_kin, atol=1e-9)


# -- stability region ---------------------------------------------------------------


def test_region_euler_center_and_edge():
    assert stability_region_contains(IntegratorKind.EULER, -1.0)
    assert not stability_region_contains(IntegratorKind.EULER, -2.01)


def test_region_rk4_real_axis():
    assert stability_region_contains(IntegratorKind.RK4, -2.6)
    assert not stability_region_contains(IntegratorKind.RK4, -2.9)


@settings(max_examples=1000, deadline=None)
@given(st.complex_numbers(max_magnitude=4.0, allow_nan=False, allow_infinity=False))
def test_region_euler_is_unit_disk(z):
    assert stability_region_contains(IntegratorKind.EULER, z) == (abs(1.0 + z) <= 1.0 + 1e-10)


# -- stability scan -----------------------------------------------------------------


SPEEDS = list(range(2, 42, 2))


def test_tiny_h_all_stable(vehicle, tires):
    rep = model_stability_scan("tricycle", vehicle, tires, 1e-5, IntegratorKind.RK4, SPEEDS)
    assert all(p.stable for p in rep.points)
    assert rep.min_stable_speed == SPEEDS[0]


@pytest.mark.parametrize("model", ["single-track", "tricycle"])
@pytest.mark.parametrize("kind,hs", [
    (IntegratorKind.EULER, [0.02, 0.008, 0.004]),
    (IntegratorKind.RK4, [0.04, 0.02, 0.008]),
])
def test_min_stable_speed_monotone_in_h(model, kind, hs, vehicle, tires):
    mins = []
    for h in hs:
        rep = model_stability_scan(model, vehicle, tires, h, kind, SPEEDS)
        assert rep.min_stable_speed is not None
        mins.append(rep.min_stable_speed)
    assert all(a >= b for a, b in zip(mins, mins[1:]))


def test_tricycle_h8ms_euler_covers_8ms(vehicle, tires):
    rep = model_stability_scan("tricycle", vehicle, tires, 0.008, IntegratorKind.EULER, SPEEDS)
    assert rep.min_stable_speed is not None
    assert rep.min_stable_speed <= 8.0
    coarse = model_stability_scan("tricycle", vehicle, tires, 0.04, IntegratorKind.RK4, SPEEDS)
    assert coarse.min_stable_speed > rep.min_stable_speed


def test_flags_match_nonlinear_divergence(vehicle, tires):
    rep = model_stability_scan("tricycle", vehicle, tires, 0.04, IntegratorKind.RK4, SPEEDS)
    thr = rep.min_stable_speed
    for p in rep.points:
        if p.indeterminate:
            continue
        if not p.stable:
            assert divergence_check("tricycle", p.speed, 0.04, IntegratorKind.RK4,
                                    vehicle, tires)
        elif p.speed >= thr + 2.0:
            assert not divergence_check("tricycle", p.speed, 0.04, IntegratorKind.RK4,
                                        vehicle, tires)


def test_report_serializes(vehicle, tires):
    import json

    rep = model_stability_scan("tricycle", vehicle, tires, 0.008, IntegratorKind.EULER,
                               [4.0, 8.0])
    blob = json.dumps(rep.to_dict())
    assert "min_stable_speed" in blob
