"""Shortest curvature-bounded paths between two poses and their time sampling.

Turn direction convention: ``L`` increases heading (counterclockwise),
``R`` decreases it. Turn segment parameters are arc angles in radians,
the straight segment parameter is a length in metres.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kinematics import TWO_PI, AircraftParams, AircraftState, wrap_angle, wrap_angles

WORDS = ("LSL", "LSR", "RSL", "RSR", "RLR", "LRL")

_ANGLE_SNAP = 1e-10
_ENDPOINT_TOL_POS = 1e-6
_ENDPOINT_TOL_ANG = 1e-9


class DubinsError(ValueError):
    pass


def _mod2pi(a: float) -> float:
    m = math.fmod(a, TWO_PI)
    if m < 0:
        m += TWO_PI
    if m > TWO_PI - _ANGLE_SNAP or m < _ANGLE_SNAP:
        return 0.0
    return m


@dataclass(frozen=True)
class DubinsPath:
    word: str
    seg_params: tuple[float, float, float]
    turn_radius: float
    start_pose: AircraftState

    @property
    def segment_lengths(self) -> tuple[float, float, float]:
        r = self.turn_radius
        return tuple(
            p if c == "S" else p * r for c, p in zip(self.word, self.seg_params)
        )

    @property
    def total_length(self) -> float:
        return float(sum(self.segment_lengths))

    def endpoint(self) -> AircraftState:
        return self.pose_at(self.total_length)

    def pose_at(self, s: float) -> AircraftState:
        x, y, h = self.sample(np.array([s]))[0]
        return AircraftState(x, y, h)

    def sample(self, arc: np.ndarray) -> np.ndarray:
        """Poses at arc lengths ``arc`` (clipped to the path), shape (n, 3).

        Headings are unwrapped relative to the start heading.
        """
        arc = np.clip(np.asarray(arc, dtype=float), 0.0, self.total_length)
        out = np.empty((arc.size, 3))
        x0, y0, h0 = self.start_pose.x, self.start_pose.y, self.start_pose.heading
        r = self.turn_radius
        seg_start = 0.0
        done = np.zeros(arc.size, dtype=bool)
        for i, (c, length) in enumerate(zip(self.word, self.segment_lengths)):
            last = i == 2
            mask = ~done & ((arc <= seg_start + length) | last)
            ds = arc[mask] - seg_start
            x, y, h = _advance(x0, y0, h0, c, ds, r)
            out[mask, 0], out[mask, 1], out[mask, 2] = x, y, h
            done |= mask
            x0, y0, h0 = (float(v[0]) for v in _advance(x0, y0, h0, c, np.array([length]), r))
            seg_start += length
        return out

    def mirrored(self) -> "DubinsPath":
        swap = {"L": "R", "R": "L", "S": "S"}
        sp = self.start_pose
        return DubinsPath(
            "".join(swap[c] for c in self.word),
            self.seg_params,
            self.turn_radius,
            AircraftState(sp.x, -sp.y, -sp.heading),
        )


def _advance(x, y, h, c, ds, r):
    if c == "S":
        return x + ds * np.cos(h), y + ds * np.sin(h), h + 0.0 * ds
    if c == "L":
        a = ds / r
        return x + r * (np.sin(h + a) - math.sin(h)), y - r * (np.cos(h + a) - math.cos(h)), h + a
    a = ds / r
    return x - r * (np.sin(h - a) - math.sin(h)), y + r * (np.cos(h - a) - math.cos(h)), h - a


# Each word solver takes normalised (d, alpha, beta) and returns (t, p, q) or None.

def _lsl(d, a, b):
    sa, sb, ca, cb = math.sin(a), math.sin(b), math.cos(a), math.cos(b)
    p2 = 2 + d * d - 2 * math.cos(a - b) + 2 * d * (sa - sb)
    if p2 < 0:
        return None
    tmp = math.atan2(cb - ca, d + sa - sb)
    return _mod2pi(-a + tmp), math.sqrt(p2), _mod2pi(b - tmp)


def _rsr(d, a, b):
    sa, sb, ca, cb = math.sin(a), math.sin(b), math.cos(a), math.cos(b)
    p2 = 2 + d * d - 2 * math.cos(a - b) + 2 * d * (sb - sa)
    if p2 < 0:
        return None
    tmp = math.atan2(ca - cb, d - sa + sb)
    return _mod2pi(a - tmp), math.sqrt(p2), _mod2pi(-b + tmp)


def _lsr(d, a, b):
    sa, sb, ca, cb = math.sin(a), math.sin(b), math.cos(a), math.cos(b)
    p2 = -2 + d * d + 2 * math.cos(a - b) + 2 * d * (sa + sb)
    if p2 < 0:
        return None
    p = math.sqrt(p2)
    tmp = math.atan2(-ca - cb, d + sa + sb) - math.atan2(-2.0, p)
    return _mod2pi(-a + tmp), p, _mod2pi(-b + tmp)


def _rsl(d, a, b):
    sa, sb, ca, cb = math.sin(a), math.sin(b), math.cos(a), math.cos(b)
    p2 = d * d - 2 + 2 * math.cos(a - b) - 2 * d * (sa + sb)
    if p2 < 0:
        return None
    p = math.sqrt(p2)
    tmp = math.atan2(ca + cb, d - sa - sb) - math.atan2(2.0, p)
    return _mod2pi(a - tmp), p, _mod2pi(b - tmp)


def _rlr(d, a, b):
    sa, sb, ca, cb = math.sin(a), math.sin(b), math.cos(a), math.cos(b)
    tmp = (6.0 - d * d + 2 * math.cos(a - b) + 2 * d * (sa - sb)) / 8.0
    if abs(tmp) > 1.0:
        return None
    p = _mod2pi(TWO_PI - math.acos(tmp))
    t = _mod2pi(a - math.atan2(ca - cb, d - sa + sb) + p / 2.0)
    return t, p, _mod2pi(a - b - t + p)


def _lrl(d, a, b):
    sa, sb, ca, cb = math.sin(a), math.sin(b), math.cos(a), math.cos(b)
    tmp = (6.0 - d * d + 2 * math.cos(a - b) + 2 * d * (sb - sa)) / 8.0
    if abs(tmp) > 1.0:
        return None
    p = _mod2pi(TWO_PI - math.acos(tmp))
    t = _mod2pi(-a - math.atan2(ca - cb, d + sa - sb) + p / 2.0)
    return t, p, _mod2pi(b - a - t + p)


_SOLVERS = {"LSL": _lsl, "LSR": _lsr, "RSL": _rsl, "RSR": _rsr, "RLR": _rlr, "LRL": _lrl}


def candidate_paths(start: AircraftState, goal: AircraftState, turn_radius: float):
    """All words with a non-negative segment solution, as (path, endpoint_ok) pairs."""
    dx, dy = goal.x - start.x, goal.y - start.y
    d = math.hypot(dx, dy) / turn_radius
    phi = math.atan2(dy, dx) if d > 0 else 0.0
    alpha = _mod2pi(start.heading - phi)
    beta = _mod2pi(goal.heading - phi)
    out = []
    for word in WORDS:
        sol = _SOLVERS[word](d, alpha, beta)
        if sol is None:
            continue
        t, p, q = sol
        params = (t, p * turn_radius, q) if word[1] == "S" else (t, p, q)
        path = DubinsPath(word, params, turn_radius, start)
        end = path.endpoint()
        ok = (
            math.hypot(end.x - goal.x, end.y - goal.y) < _ENDPOINT_TOL_POS
            and abs(wrap_angle(end.heading - goal.heading)) < _ENDPOINT_TOL_ANG
        )
        out.append((path, ok))
    return out


def solve_dubins(start: AircraftState, goal: AircraftState, turn_radius: float) -> DubinsPath:
    """Minimum-length path from ``start`` to ``goal`` over the six words."""
    if not turn_radius > 0:
        raise DubinsError("turn radius must be positive")
    if (
        start.x == goal.x
        and start.y == goal.y
        and wrap_angle(start.heading - goal.heading) == 0.0
    ):
        return DubinsPath("LSL", (0.0, 0.0, 0.0), turn_radius, start)
    cands = candidate_paths(start, goal, turn_radius)
    good = [p for p, ok in cands if ok]
    pool = good or [p for p, _ in cands]
    if not pool:
        raise DubinsError(f"no Dubins word connects {start} to {goal}")
    return min(pool, key=lambda p: p.total_length)


@dataclass(frozen=True)
class ReferenceTrajectory:
    poses: np.ndarray  # (N, 3); headings wrapped
    source: str = "dubins"

    def __len__(self) -> int:
        return len(self.poses)

    def state(self, k: int) -> AircraftState:
        return AircraftState.from_array(self.poses[k])


def sample_map(
    start: AircraftState, goal: AircraftState, params: AircraftParams, horizon: int
) -> ReferenceTrajectory:
    """Poses at arc length k * t_e * v for k = 0..horizon-1, holding the goal past the end."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    path = solve_dubins(start, goal, params.turn_radius)
    arc = np.arange(horizon) * params.step_length
    poses = path.sample(arc)
    beyond = arc >= path.total_length
    if path.total_length == 0.0:
        beyond[:] = True
    poses[beyond] = goal.as_array()
    poses[0] = start.as_array()
    poses[:, 2] = wrap_angles(poses[:, 2])
    return ReferenceTrajectory(poses, "frozen" if path.total_length == 0.0 else "dubins")


def straight_reference(start: AircraftState, params: AircraftParams, horizon: int) -> ReferenceTrajectory:
    k = np.arange(horizon) * params.step_length
    poses = np.column_stack([
        start.x + k * math.cos(start.heading),
        start.y + k * math.sin(start.heading),
        np.full(horizon, start.heading),
    ])
    return ReferenceTrajectory(poses, "straight")


def rate_of_turn_profile(
    path: DubinsPath, params: AircraftParams, n_steps: int | None = None
) -> np.ndarray:
    """Per-step turn rate in {-u_max, 0, +u_max}.

    A step is assigned the segment containing the midpoint of its arc-length
    interval; steps past the end of the path get zero.
    """
    ds = params.step_length
    if n_steps is None:
        n_steps = int(math.ceil(path.total_length / ds))
    u = params.max_abs_turn_rate
    rates = {"L": u, "S": 0.0, "R": -u}
    mid = (np.arange(n_steps) + 0.5) * ds
    out = np.zeros(n_steps)
    bounds = np.cumsum(path.segment_lengths)
    lo = 0.0
    for c, hi in zip(path.word, bounds):
        out[(mid >= lo) & (mid < hi)] = rates[c]
        lo = hi
    return out


def path_lengths_by_word(start: AircraftState, goal: AircraftState, turn_radius: float) -> dict[str, float]:
    return {p.word: p.total_length for p, ok in candidate_paths(start, goal, turn_radius) if ok}


def transform_pose(pose: AircraftState, angle: float, shift: Sequence[float]) -> AircraftState:
    c, s = math.cos(angle), math.sin(angle)
    return AircraftState(
        c * pose.x - s * pose.y + shift[0], s * pose.x + c * pose.y + shift[1], pose.heading + angle
    )
