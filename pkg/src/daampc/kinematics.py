"""Discrete-time unicycle aircraft model and unit handling.

All quantities are SI internally: metres, m/s, radians, rad/s, seconds.
Heading is measured counterclockwise from the +x (east) axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class CorruptStateError(ValueError):
    """Raised when a state or input carries a non-finite value."""


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.pi - math.fmod(math.pi - angle, TWO_PI)
    if w > math.pi:
        w -= TWO_PI
    elif w <= -math.pi:
        w += TWO_PI
    return w


def wrap_angles(angles: np.ndarray) -> np.ndarray:
    a = np.asarray(angles, dtype=float)
    w = math.pi - np.mod(math.pi - a, TWO_PI)
    return np.where(w <= -math.pi, w + TWO_PI, w)


@dataclass(frozen=True)
class AircraftState:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.heading)):
            raise CorruptStateError(f"non-finite aircraft state {self!r}")
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading])

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "AircraftState":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def distance_to(self, other: "AircraftState") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class AircraftParams:
    speed: float
    turn_rate_min: float = -math.radians(2.0)
    turn_rate_max: float = math.radians(2.0)
    sample_time: float = 1.0

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError("speed must be positive")
        if not self.turn_rate_min <= 0 <= self.turn_rate_max:
            raise ValueError("turn-rate bounds must bracket zero")
        if not self.sample_time > 0:
            raise ValueError("sample_time must be positive")

    @property
    def max_abs_turn_rate(self) -> float:
        """Largest turn rate available in both directions."""
        return min(-self.turn_rate_min, self.turn_rate_max)

    @property
    def turn_radius(self) -> float:
        return self.speed / self.max_abs_turn_rate

    @property
    def step_length(self) -> float:
        return self.speed * self.sample_time


@dataclass
class Trajectory:
    states: list[AircraftState]
    start_time: int = 0

    def __post_init__(self):
        if not self.states:
            raise ValueError("trajectory must be non-empty")

    def __len__(self) -> int:
        return len(self.states)

    def as_array(self) -> np.ndarray:
        return np.array([s.as_array() for s in self.states])

    @property
    def steps(self) -> range:
        return range(self.start_time, self.start_time + len(self.states))

    def path_length(self) -> float:
        xy = self.as_array()[:, :2]
        return float(np.sum(np.hypot(*np.diff(xy, axis=0).T)))


def step(state: AircraftState, params: AircraftParams, u: float) -> AircraftState:
    """Advance one forward-Euler step. ``u`` is not clamped."""
    if not math.isfinite(u):
        raise CorruptStateError(f"non-finite turn rate {u!r}")
    te = params.sample_time
    v = params.speed
    return AircraftState(
        state.x + te * v * math.cos(state.heading),
        state.y + te * v * math.sin(state.heading),
        state.heading + te * u,
    )


def rollout(state: AircraftState, params: AircraftParams, inputs: Sequence[float]) -> Trajectory:
    states = [state]
    for u in inputs:
        states.append(step(states[-1], params, float(u)))
    return Trajectory(states)


# --- units -----------------------------------------------------------------

NM = 1852.0
FT = 0.3048
KT = 1852.0 / 3600.0

# unit -> (dimension, factor to SI)
_UNITS = {
    "m": ("length", 1.0),
    "NM": ("length", NM),
    "ft": ("length", FT),
    "m/s": ("speed", 1.0),
    "kt": ("speed", KT),
    "rad": ("angle", 1.0),
    "deg": ("angle", math.pi / 180.0),
    "rad/s": ("rate", 1.0),
    "deg/s": ("rate", math.pi / 180.0),
}


def convert_units(value: float, from_unit: str, to_unit: str) -> float:
    try:
        dim_a, fa = _UNITS[from_unit]
        dim_b, fb = _UNITS[to_unit]
    except KeyError as exc:
        raise ValueError(f"unknown unit {exc.args[0]!r}") from None
    if dim_a != dim_b:
        raise ValueError(f"cannot convert {from_unit} to {to_unit}")
    if from_unit == to_unit:
        return value
    return value * fa / fb
