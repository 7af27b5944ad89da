import math
import statistics

import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st

from daampc.encounter import RunRecord, make_encounter
from daampc.kinematics import AircraftState, Trajectory
from daampc.metrics import (
    NMAC_HORIZONTAL, CampaignStats, RunMetrics, WellClearParams, afd, afd_components, aggregate,
    compute_metrics, detect_ldwc, detect_nmac, heading_total_variation, hmd_at_cpa,
    modified_tau, pair_distances, projected_hmd, target_distances,
)


def straight(x0, y0, h, v, n):
    k = np.arange(n + 1)
    return np.column_stack([x0 + k * v * math.cos(h), y0 + k * v * math.sin(h), np.full(n + 1, h)])


def fake_record(flown, planned=None, speeds=(61.7, 61.7)):
    """RunRecord around arbitrary (n+1, 3) state arrays."""
    n = len(flown[0]) - 1
    cfg = make_encounter(90.0, sim_length=max(n, 2), time_to_cpa=1)
    cfg = replace(cfg, aircraft=tuple(replace(a, speed=v) for a, v in zip(cfg.aircraft, speeds)))
    planned = planned if planned is not None else flown
    T = lambda arr: Trajectory([AircraftState(*row) for row in arr])
    return RunRecord(
        config=cfg, flown=[T(f) for f in flown], planned=[T(p) for p in planned],
        applied_u=np.zeros((2, n)), solver_status=[[""] * n] * 2, solve_time=np.full((2, n), np.nan),
        solver_iterations=np.full((2, n), np.nan), max_slack=np.full((2, n), np.nan),
        delays=[1.0, 1.0], lags=[1, 1], policy_indices=[1, 1],
    )


def test_constants():
    assert NMAC_HORIZONTAL == pytest.approx(152.4)
    p = WellClearParams()
    assert (p.hmd_threshold, p.tau_mod_threshold, p.vertical_threshold, p.dmod) == pytest.approx(
        (1219.2, 35.0, 137.16, 1219.2))
    with pytest.raises(ValueError):
        WellClearParams(tau_mod_threshold=0.0)


def test_projected_hmd_examples():
    assert projected_hmd((10000, 0), (-123.4, 0)) == 0.0
    assert projected_hmd((10000, 0), (10, 0)) == 10000.0
    assert projected_hmd((10000, 500), (-123.4, 0)) == pytest.approx(500.0, abs=1e-9)
    assert projected_hmd((3, 4), (0, 0)) == 5.0


@given(st.tuples(st.floats(-1e5, 1e5), st.floats(-1e5, 1e5)), st.tuples(st.floats(-300, 300), st.floats(-300, 300)))
def test_projected_hmd_never_exceeds_range(p, v):
    assert projected_hmd(p, v) <= math.hypot(*p) + 1e-9
    assert projected_hmd(p, v) >= 0


def test_modified_tau_examples():
    assert modified_tau(5000, -123.4) == pytest.approx((25e6 - 1219.2 ** 2) / (5000 * 123.4), rel=1e-12)
    assert modified_tau(5000, -123.4) == pytest.approx(38.11, abs=0.005)
    assert modified_tau(1e6, -100) == pytest.approx(1e4, rel=1e-4)
    assert modified_tau(5000, 0.0) == math.inf and modified_tau(5000, 3.0) == math.inf
    assert modified_tau(1000, 5.0) == 0.0


def test_ldwc_head_on_unmitigated():
    rec = fake_record([straight(-18510, 0, 0, 61.7, 600), straight(18510, 0, math.pi, 61.7, 600)])
    assert detect_ldwc(rec)
    assert detect_nmac(rec)


def test_no_ldwc_parallel_tracks():
    rec = fake_record([straight(0, 0, 0, 61.7, 100), straight(0, 5000, 0, 61.7, 100)])
    assert not detect_ldwc(rec)
    assert hmd_at_cpa(rec) == pytest.approx(5000.0)


@pytest.mark.parametrize("gap,expect", [(150.0, True), (153.0, False)])
def test_nmac_threshold(gap, expect):
    rec = fake_record([straight(0, 0, 0, 0.0, 5), straight(gap, 0, 0, 0.0, 5)])
    assert detect_nmac(rec) is expect
    assert hmd_at_cpa(rec) == pytest.approx(gap)


def test_stationary_points():
    rec = fake_record([straight(0, 0, 0, 0.0, 3), straight(0, 100, 0, 0.0, 3)])
    assert hmd_at_cpa(rec) == 100.0
    assert pair_distances(rec).shape == (1, 4)


@pytest.mark.parametrize("heading", [45.0, 90.0, 135.0, 180.0])
@pytest.mark.parametrize("speed", [120.0, 140.0])
def test_unmitigated_crossing_discrete_cpa_bound(heading, speed):
    cfg = make_encounter(heading, speed, time_to_cpa=300.5, sim_length=600)
    rec = fake_record([fake.as_array() for fake in _planned(cfg)], speeds=[a.speed for a in cfg.aircraft])
    a, b = cfg.aircraft
    rel_speed = math.hypot(a.speed - b.speed * math.cos(math.radians(heading)), b.speed * math.sin(math.radians(heading)))
    discrete = hmd_at_cpa(rec)
    assert discrete <= 0.5 * rel_speed * cfg.sample_time + 1e-6
    assert hmd_at_cpa(rec, interpolate=True) <= discrete
    assert hmd_at_cpa(rec, interpolate=True) < 1e-6


def _planned(cfg):
    from daampc.encounter import _planned as planned_traj
    return [planned_traj(a, cfg.params(i), cfg.sim_length) for i, a in enumerate(cfg.aircraft)]


def test_afd_unequipped_and_turn_only():
    base = straight(0, 0, 0, 61.7, 50)
    rec = fake_record([base, base + [0, 9000, 0]])
    assert afd(rec) == 0.0
    # constant-speed turning path: equal length, AFD is the end gap
    h = np.concatenate([[0.0], np.cumsum(np.full(50, 0.02))])
    turned = np.zeros((51, 3))
    turned[:, 2] = h
    for k in range(50):
        turned[k + 1, :2] = turned[k, :2] + 61.7 * np.array([math.cos(h[k]), math.sin(h[k])])
    rec = fake_record([turned, base + [0, 9000, 0]], planned=[base, base + [0, 9000, 0]])
    (extra, gap), (e2, g2) = afd_components(rec)
    assert extra == pytest.approx(0.0, abs=1e-9) and e2 == 0.0 and g2 == 0.0
    assert gap == pytest.approx(math.hypot(*(turned[-1, :2] - base[-1, :2])))
    assert afd(rec) == pytest.approx(gap)


def test_afd_length_mismatch():
    rec = fake_record([straight(0, 0, 0, 1, 5), straight(0, 9, 0, 1, 5)],
                      planned=[straight(0, 0, 0, 1, 4), straight(0, 9, 0, 1, 5)])
    with pytest.raises(ValueError):
        afd(rec)


@settings(max_examples=30)
@given(st.floats(-math.pi, math.pi), st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.integers(0, 2 ** 32 - 1))
def test_afd_rigid_invariance(angle, dx, dy, seed):
    rng = np.random.default_rng(seed)
    flown = [straight(0, 0, 0, 60, 30), straight(0, 4000, 0, 60, 30)]
    flown[0][:, :2] += np.cumsum(rng.normal(0, 20, (31, 2)), axis=0)
    planned = [straight(0, 0, 0, 60, 30), straight(0, 4000, 0, 60, 30)]
    c, s = math.cos(angle), math.sin(angle)
    rot = lambda a: np.column_stack([c * a[:, 0] - s * a[:, 1] + dx, s * a[:, 0] + c * a[:, 1] + dy, a[:, 2] + angle])
    a = afd(fake_record(flown, planned))
    b = afd(fake_record([rot(f) for f in flown], [rot(p) for p in planned]))
    assert b == pytest.approx(a, rel=1e-7, abs=1e-6)


@settings(max_examples=30)
@given(st.floats(-3000, 3000), st.floats(0, math.pi), st.floats(1.0, 2.0), st.floats(1.0, 2.0), st.floats(1.0, 2.0))
def test_ldwc_monotone_in_thresholds(offset, hdg, k1, k2, k3):
    rec = fake_record([straight(-12000, 0, 0, 61.7, 400),
                       straight(-12000 * math.cos(hdg) + offset, -12000 * math.sin(hdg), hdg, 61.7, 400)])
    base = WellClearParams()
    bigger = WellClearParams(base.hmd_threshold * k1, base.tau_mod_threshold * k2, base.vertical_threshold, base.dmod * k3)
    if detect_ldwc(rec, base):
        assert detect_ldwc(rec, bigger)


@settings(max_examples=30)
@given(st.floats(-500, 500), st.floats(0, math.pi))
def test_nmac_implies_small_hmd(offset, hdg):
    rec = fake_record([straight(-6000, 0, 0, 61.7, 200),
                       straight(-6000 * math.cos(hdg), -6000 * math.sin(hdg) + offset, hdg, 61.7, 200)])
    m = compute_metrics(rec)
    if m.nmac:
        assert m.hmd < NMAC_HORIZONTAL
    assert m.hmd >= 0


def test_heading_total_variation_unwraps():
    h = np.array([3.1, -3.1, 3.1])  # two small steps across the branch cut
    tr = np.column_stack([np.zeros(3), np.zeros(3), h])
    rec = fake_record([tr, tr])
    tv = heading_total_variation(rec)
    assert tv == pytest.approx([2 * (2 * math.pi - 6.2)] * 2)


def test_target_distances():
    rec = fake_record([straight(0, 0, 0, 1, 3), straight(0, 0, 0, 1, 3)])
    t1, t2 = (a.target for a in rec.config.aircraft)
    d = target_distances(rec)
    assert d[0] == pytest.approx(math.hypot(3 - t1.x, t1.y))
    assert d[1] == pytest.approx(math.hypot(3 - t2.x, t2.y))


def _m(ldwc=False, nmac=False, hmd=3000.0, afd_=2000.0):
    return RunMetrics(ldwc, nmac, hmd, afd_)


def test_aggregate_examples():
    ms = [_m(ldwc=i == 0, hmd=3000 + i, afd_=100 * i) for i in range(8)]
    s = aggregate(ms)
    assert s.ldwc_pct == 12.5 and s.nmac_pct == 0.0 and s.n_runs == 8
    assert s.hmd_mean == pytest.approx(statistics.mean(m.hmd for m in ms))
    assert s.hmd_sd == pytest.approx(statistics.stdev(m.hmd for m in ms))
    assert s.afd_sd == pytest.approx(statistics.stdev(m.afd for m in ms))
    one = aggregate([_m()])
    assert one.hmd_sd == 0.0 and one.afd_sd == 0.0
    with pytest.raises(ValueError):
        aggregate([])


@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.floats(0, 1e4), st.floats(0, 1e5)), min_size=1, max_size=20))
def test_aggregate_ranges(rows):
    s = aggregate([RunMetrics(*r) for r in rows])
    assert 0 <= s.ldwc_pct <= 100 and 0 <= s.nmac_pct <= 100
    assert s.hmd_sd >= 0 and s.afd_sd >= 0
    assert isinstance(s, CampaignStats)
