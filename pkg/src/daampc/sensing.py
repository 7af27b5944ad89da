"""AR(1) sensor-error processes for intruder position and velocity."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kinematics import AircraftState

POSITION_SD = 37.8  # m, stationary
VELOCITY_SD = 4.08  # m/s, stationary
AUTOCORRELATION = 0.997


class Ar1Process:
    """Per-axis first-order autoregressive error e+ = a e + w.

    ``stationary_sd`` is the SD of the process itself; the innovation SD is
    derived from it so the stationary variance is preserved exactly.
    """

    def __init__(self, stationary_sd: float, autocorrelation: float = AUTOCORRELATION, dim: int = 2):
        if not abs(autocorrelation) < 1.0:
            raise ValueError("|autocorrelation| must be < 1")
        if stationary_sd < 0:
            raise ValueError("stationary_sd must be >= 0")
        self.a = float(autocorrelation)
        self.stationary_sd = float(stationary_sd)
        self.dim = dim
        self.current_error = np.zeros(dim)
        self.initialized = False

    @property
    def innovation_sd(self) -> float:
        return self.stationary_sd * math.sqrt(1.0 - self.a * self.a)

    def init(self, rng: np.random.Generator) -> np.ndarray:
        """Draw the starting error from the stationary distribution."""
        self.current_error = self.stationary_sd * rng.standard_normal(self.dim)
        self.initialized = True
        return self.current_error

    def advance(self, rng: np.random.Generator) -> np.ndarray:
        if not self.initialized:
            raise RuntimeError("process must be initialised before advancing")
        self.current_error = self.a * self.current_error + self.innovation_sd * rng.standard_normal(self.dim)
        return self.current_error

    def simulate(self, rng: np.random.Generator, n_steps: int) -> np.ndarray:
        """Initialise and return the error sequence over n_steps, shape (n_steps, dim).

        Row 0 is the initial draw. Uses the same draws as repeated
        ``advance`` calls, only vectorised through ``scipy.signal.lfilter``.
        """
        from scipy.signal import lfilter

        noise = rng.standard_normal((n_steps, self.dim))
        noise[0] *= self.stationary_sd
        noise[1:] *= self.innovation_sd
        out = lfilter([1.0], [1.0, -self.a], noise, axis=0)
        self.current_error = out[-1].copy()
        self.initialized = True
        return out


@dataclass(frozen=True)
class SensedState:
    x: float
    y: float
    vx: float
    vy: float

    @property
    def heading(self) -> float:
        return math.atan2(self.vy, self.vx)

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def pose(self) -> AircraftState:
        return AircraftState(self.x, self.y, self.heading)


def corrupt(true_state: AircraftState, true_speed: float, pos_proc: Ar1Process | None,
            vel_proc: Ar1Process | None) -> SensedState:
    """Observed intruder: true position/velocity plus the current errors."""
    vx = true_speed * math.cos(true_state.heading)
    vy = true_speed * math.sin(true_state.heading)
    ex, ey = (0.0, 0.0) if pos_proc is None else pos_proc.current_error
    evx, evy = (0.0, 0.0) if vel_proc is None else vel_proc.current_error
    return SensedState(true_state.x + ex, true_state.y + ey, vx + evx, vy + evy)


class SensorChannel:
    """Position and velocity error processes of one observer for one intruder."""

    def __init__(self, rng: np.random.Generator, pos_sd: float = POSITION_SD,
                 vel_sd: float = VELOCITY_SD, autocorrelation: float = AUTOCORRELATION):
        self.rng = rng
        self.pos = Ar1Process(pos_sd, autocorrelation)
        self.vel = Ar1Process(vel_sd, autocorrelation)
        self.pos.init(rng)
        self.vel.init(rng)

    def observe(self, state: AircraftState, speed: float) -> SensedState:
        return corrupt(state, speed, self.pos, self.vel)

    def advance(self) -> None:
        self.pos.advance(self.rng)
        self.vel.advance(self.rng)
