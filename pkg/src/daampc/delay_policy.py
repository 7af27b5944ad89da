"""Response delays and the two ways of executing a stale advisory.

An advisory computed at step ``t - lag`` reaches the aircraft at step ``t``.
``common`` applies the first input of that plan; ``delay`` applies the input
the plan had scheduled for the current time, i.e. index ``lag``.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .ocp import OcpSolution

# fixed lags (s) of the deterministic response kinds
FIXED_DELAYS = {"auto": 1.0, "quick": 4.0, "slow": 12.0}
DELAY_KINDS = (*FIXED_DELAYS, "stochastic")


class PolicyKind(str, enum.Enum):
    COMMON = "common"
    DELAY = "delay"


def lognormal_params(mean: float, sd: float) -> tuple[float, float]:
    """Underlying normal (mu_n, sigma_n) of a lognormal with the given moments."""
    s2 = math.log1p((sd / mean) ** 2)
    return math.log(mean) - 0.5 * s2, math.sqrt(s2)


@dataclass(frozen=True)
class DelayModel:
    kind: str = "auto"
    lognormal_mu: float = 4.0
    lognormal_sigma: float = 2.5

    def __post_init__(self):
        if self.kind not in DELAY_KINDS:
            raise ValueError(f"unknown delay kind {self.kind!r}; expected one of {DELAY_KINDS}")
        if not (self.lognormal_mu > 0 and self.lognormal_sigma > 0):
            raise ValueError("lognormal mean and SD must be positive")

    @property
    def fixed_delay(self) -> float | None:
        return FIXED_DELAYS.get(self.kind)

    @property
    def stochastic(self) -> bool:
        return self.kind == "stochastic"

    @property
    def normal_params(self) -> tuple[float, float]:
        return lognormal_params(self.lognormal_mu, self.lognormal_sigma)


def sample_delay(model: DelayModel, rng: np.random.Generator) -> float:
    """One delay draw (s). Deterministic kinds do not touch the generator."""
    if not model.stochastic:
        return model.fixed_delay
    mu_n, sigma_n = model.normal_params
    return float(math.exp(mu_n + sigma_n * rng.standard_normal()))


def sample_delays(model: DelayModel, rng: np.random.Generator, size: int) -> np.ndarray:
    """Vectorised draws, used by the distribution checks."""
    if not model.stochastic:
        return np.full(size, model.fixed_delay)
    mu_n, sigma_n = model.normal_params
    return np.exp(mu_n + sigma_n * rng.standard_normal(size))


def effective_delay_steps(model: DelayModel, delay: float, sample_time: float = 1.0) -> tuple[int, int]:
    """Return ``(lag, policy_index)`` in whole steps.

    The plant lag is the sampled delay rounded to the step grid. The policy
    index is the same for deterministic kinds; for stochastic delays the
    controller only knows the mean, so it uses the rounded mean instead.
    """
    if delay < 0 or not math.isfinite(delay):
        raise ValueError(f"delay must be finite and >= 0, got {delay}")
    lag = int(round(delay / sample_time))
    if model.stochastic:
        return lag, int(round(model.lognormal_mu / sample_time))
    return lag, lag


class SolutionBuffer:
    """Most recent MPC solutions keyed by the step they were issued at."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[tuple[int, OcpSolution | None]] = deque(maxlen=capacity)

    def push(self, t: int, solution: OcpSolution | None) -> None:
        """Store the plan issued at step t (None marks a failed solve)."""
        if self._items and t <= self._items[-1][0]:
            raise ValueError(f"issue steps must increase: {t} after {self._items[-1][0]}")
        self._items.append((t, solution))

    def get(self, t: int) -> OcpSolution | None:
        for step, sol in reversed(self._items):
            if step == t:
                return sol
            if step < t:
                break
        raise KeyError(f"no solution buffered for step {t}")

    def __len__(self) -> int:
        return len(self._items)

    @property
    def steps(self) -> list[int]:
        return [t for t, _ in self._items]


def act(buffer: SolutionBuffer, t: int, lag: int, policy_index: int, kind: PolicyKind | str) -> float | None:
    """Turn rate applied at step t.

    Before the first advisory arrives (t < lag) the aircraft flies its
    planned heading and 0 is returned. ``None`` means the plan issued at
    ``t - lag`` came from a failed solve; the caller then holds its previous
    command.
    """
    kind = PolicyKind(kind)
    if t < lag:
        return 0.0
    sol = buffer.get(t - lag)
    if sol is None:
        return None
    idx = 0 if kind is PolicyKind.COMMON else min(policy_index, len(sol.inputs) - 1)
    return float(sol.inputs[idx])
