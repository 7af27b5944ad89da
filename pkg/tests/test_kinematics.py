import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from daampc.kinematics import (
    FT, KT, NM, AircraftParams, AircraftState, CorruptStateError, Trajectory,
    convert_units, rollout, step, wrap_angle, wrap_angles,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)
angles = st.floats(-50.0, 50.0, allow_nan=False)
U2 = math.radians(2.0)


def test_step_straight_east():
    s = step(AircraftState(0, 0, 0), AircraftParams(61.7), 0.0)
    assert (s.x, s.y, s.heading) == (61.7, 0.0, 0.0)


def test_step_north_with_turn():
    u = 0.0349066
    s = step(AircraftState(0, 0, math.pi / 2), AircraftParams(61.7), u)
    assert s.x == pytest.approx(0.0, abs=1e-12)
    assert s.y == pytest.approx(61.7, rel=1e-15)
    assert s.heading == pytest.approx(math.pi / 2 + u, abs=1e-15)


def _mp_rollout(s0, v, te, u, n):
    mpmath.mp.dps = 50
    x, y, h = (mpmath.mpf(c) for c in s0)
    out = [(x, y, h)]
    for _ in range(n):
        x, y, h = x + te * v * mpmath.cos(h), y + te * v * mpmath.sin(h), h + te * u
        out.append((x, y, h))
    return out


def test_constant_turn_rollout_matches_extended_precision():
    # oracle: the same Euler recursion evaluated with 50 significant digits
    p = AircraftParams(61.7)
    traj = rollout(AircraftState(0, 0, 0), p, [U2] * 600).as_array()
    ref = _mp_rollout((0, 0, 0), mpmath.mpf("61.7"), 1, mpmath.radians(2), 600)
    for k in (1, 90, 180, 360, 600):
        x, y, h = ref[k]
        scale = max(1.0, math.hypot(float(x), float(y)))
        assert math.hypot(traj[k, 0] - float(x), traj[k, 1] - float(y)) / scale < 1e-6
        assert abs(wrap_angle(traj[k, 2] - float(h))) < 1e-9
    # 180 steps at 2 deg/s is one full turn: heading wraps back to the start
    assert abs(traj[180, 2]) < 1e-9


def test_step_rejects_non_finite():
    p = AircraftParams(61.7)
    with pytest.raises(CorruptStateError):
        step(AircraftState(0, 0, 0), p, float("nan"))
    with pytest.raises(CorruptStateError):
        AircraftState(float("inf"), 0, 0)
    with pytest.raises(CorruptStateError):
        AircraftState(0, 0, float("nan"))


@pytest.mark.parametrize("kw", [dict(speed=0), dict(speed=10, turn_rate_min=0.1),
                                dict(speed=10, turn_rate_max=-0.1), dict(speed=10, sample_time=0)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        AircraftParams(**kw)


def test_params_defaults_and_radius():
    p = AircraftParams(61.7)
    assert p.sample_time == 1.0
    assert p.turn_rate_max == pytest.approx(math.radians(2))
    assert p.turn_radius == pytest.approx(1767.6, abs=0.1)


@pytest.mark.parametrize("value,a,b,expected", [
    (1.8, "NM", "m", 3333.6),
    (120, "kt", "m/s", 61.733333333333334),
    (500, "ft", "m", 152.4),
    (2, "deg/s", "rad/s", math.radians(2)),
    (3333.6, "m", "NM", 1.8),
])
def test_convert_units(value, a, b, expected):
    assert convert_units(value, a, b) == pytest.approx(expected, rel=1e-15)


def test_unit_constants_exact():
    assert NM == 1852.0 and FT == 0.3048 and KT == 1852.0 / 3600.0


def test_convert_units_errors():
    with pytest.raises(ValueError):
        convert_units(1, "m", "deg")
    with pytest.raises(ValueError):
        convert_units(1, "furlong", "m")


def test_trajectory_requires_states():
    with pytest.raises(ValueError):
        Trajectory([])


@given(angles)
def test_wrap_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


@given(angles)
def test_wrap_periodic(a):
    # exact equality is not attainable: a + 2pi rounds differently from a
    assert abs(wrap_angle(a + 2 * math.pi) - wrap_angle(a)) < 1e-12 or \
        abs(abs(wrap_angle(a + 2 * math.pi) - wrap_angle(a)) - 2 * math.pi) < 1e-12


def test_wrap_boundary_is_pi():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert np.all(wrap_angles(np.array([-math.pi, 3 * math.pi])) == math.pi)


@given(finite, finite, angles, st.floats(1.0, 300.0), st.floats(-U2, U2))
def test_step_length_and_heading_written_wrapped(x, y, h, v, u):
    s0 = AircraftState(x, y, h)
    s1 = step(s0, AircraftParams(v), u)
    assert math.hypot(s1.x - s0.x, s1.y - s0.y) == pytest.approx(v, rel=1e-9, abs=1e-9)
    assert -math.pi < s1.heading <= math.pi


@given(st.lists(st.floats(-U2, U2), min_size=1, max_size=50))
def test_rollout_deterministic(us):
    p = AircraftParams(61.7)
    a = rollout(AircraftState(1.0, 2.0, 0.3), p, us).as_array()
    b = rollout(AircraftState(1.0, 2.0, 0.3), p, us).as_array()
    assert a.tobytes() == b.tobytes()
    assert len(a) == len(us) + 1
