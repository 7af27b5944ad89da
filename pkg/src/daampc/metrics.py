"""Safety and efficiency metrics of simulated encounters.

All metrics use true states. Scenarios are co-altitude, so the vertical
clauses of the well-clear and NMAC definitions always hold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .kinematics import FT

NMAC_HORIZONTAL = 500 * FT  # 152.4 m
NMAC_VERTICAL = 100 * FT


@dataclass(frozen=True)
class WellClearParams:
    hmd_threshold: float = 4000 * FT  # 1219.2 m
    tau_mod_threshold: float = 35.0  # s
    vertical_threshold: float = 450 * FT  # 137.16 m
    dmod: float = 4000 * FT

    def __post_init__(self):
        for name in ("hmd_threshold", "tau_mod_threshold", "vertical_threshold", "dmod"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class RunMetrics:
    ldwc: bool
    nmac: bool
    hmd: float
    afd: float


@dataclass(frozen=True)
class CampaignStats:
    n_runs: int
    ldwc_pct: float
    nmac_pct: float
    hmd_mean: float
    hmd_sd: float
    afd_mean: float
    afd_sd: float


def projected_hmd(rel_pos, rel_vel) -> float:
    """Miss distance if both aircraft hold their current velocities.

    Only a closing pair has a future CPA; otherwise the current range is
    already the closest approach.
    """
    px, py = float(rel_pos[0]), float(rel_pos[1])
    vx, vy = float(rel_vel[0]), float(rel_vel[1])
    r = math.hypot(px, py)
    speed = math.hypot(vx, vy)
    if speed == 0.0 or px * vx + py * vy >= 0.0:
        return r
    return min(abs(px * vy - py * vx) / speed, r)


def modified_tau(r: float, rdot: float, dmod: float = 4000 * FT) -> float:
    """Modified tau in seconds; ``inf`` for a non-closing pair outside dmod."""
    if r <= dmod:
        return 0.0
    if rdot < 0.0:
        return -(r * r - dmod * dmod) / (r * rdot)
    return math.inf


def _velocity(headings: np.ndarray, speed: float) -> np.ndarray:
    return speed * np.column_stack([np.cos(headings), np.sin(headings)])


def _pairs(record) -> Iterable[tuple[int, int]]:
    return combinations(range(record.n_aircraft), 2)


def pair_distances(record) -> np.ndarray:
    """(n_pairs, sim_length + 1) horizontal distances over time."""
    pos = record.positions()
    return np.array([np.linalg.norm(pos[i] - pos[j], axis=1) for i, j in _pairs(record)])


def well_clear_violations(record, params: WellClearParams = WellClearParams()) -> np.ndarray:
    """Boolean (n_pairs, sim_length + 1): steps at which all conditions hold."""
    pos = record.positions()
    hdg = record.headings()
    speeds = [a.speed for a in record.config.aircraft]
    out = []
    for i, j in _pairs(record):
        rel_p = pos[j] - pos[i]
        rel_v = _velocity(hdg[j], speeds[j]) - _velocity(hdg[i], speeds[i])
        flags = np.zeros(len(rel_p), dtype=bool)
        for t in range(len(rel_p)):
            r = math.hypot(*rel_p[t])
            if projected_hmd(rel_p[t], rel_v[t]) > params.hmd_threshold:
                continue
            rdot = float(rel_p[t] @ rel_v[t]) / r if r > 0 else 0.0
            tau = modified_tau(r, rdot, params.dmod)
            # co-altitude: vertical separation 0 always within threshold
            flags[t] = tau <= params.tau_mod_threshold
        out.append(flags)
    return np.array(out)


def detect_ldwc(record, params: WellClearParams = WellClearParams()) -> bool:
    return bool(well_clear_violations(record, params).any())


def _segment_min(r0: np.ndarray, r1: np.ndarray) -> np.ndarray:
    """Minimum norm of r0 + s (r1 - r0) over s in [0, 1], row-wise."""
    d = r1 - r0
    dd = (d * d).sum(axis=1)
    s = np.zeros(len(d))
    nz = dd > 0
    s[nz] = np.clip(-(r0[nz] * d[nz]).sum(axis=1) / dd[nz], 0.0, 1.0)
    return np.linalg.norm(r0 + s[:, None] * d, axis=1)


def hmd_at_cpa(record, interpolate: bool = False) -> float:
    """Smallest pairwise horizontal distance over the run.

    By default the minimum is over the sampled steps. With ``interpolate``
    the relative position is taken as linear within each step, which can
    only lower the value.
    """
    pos = record.positions()
    best = math.inf
    for i, j in _pairs(record):
        rel = pos[j] - pos[i]
        if interpolate and len(rel) > 1:
            m = float(_segment_min(rel[:-1], rel[1:]).min())
        else:
            m = float(np.linalg.norm(rel, axis=1).min())
        best = min(best, m)
    return best


def detect_nmac(record, threshold: float = NMAC_HORIZONTAL) -> bool:
    return hmd_at_cpa(record) < threshold


def _chord_length(xy: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(xy, axis=0), axis=1).sum())


def afd_components(record) -> list[tuple[float, float]]:
    """Per aircraft (extra path length, final position gap)."""
    flown = record.positions("flown")
    planned = record.positions("planned")
    out = []
    for f, p in zip(flown, planned):
        if f.shape != p.shape:
            raise ValueError("flown and planned trajectories differ in length")
        out.append((_chord_length(f) - _chord_length(p), float(np.linalg.norm(f[-1] - p[-1]))))
    return out


def afd(record) -> float:
    """Additional flight distance summed over aircraft."""
    return float(sum(extra + gap for extra, gap in afd_components(record)))


def target_distances(record) -> list[float]:
    """Final distance of each aircraft to its target position."""
    pos = record.positions()
    return [float(math.hypot(pos[i, -1, 0] - a.target.x, pos[i, -1, 1] - a.target.y))
            for i, a in enumerate(record.config.aircraft)]


def heading_total_variation(record) -> np.ndarray:
    """Sum of absolute per-step heading changes (rad) for each aircraft."""
    h = np.unwrap(record.headings(), axis=1)
    return np.abs(np.diff(h, axis=1)).sum(axis=1)


def compute_metrics(record, params: WellClearParams = WellClearParams(),
                    interpolate: bool = False) -> RunMetrics:
    return RunMetrics(
        ldwc=detect_ldwc(record, params),
        nmac=detect_nmac(record),
        hmd=hmd_at_cpa(record, interpolate),
        afd=afd(record),
    )


def _mean_sd(values: np.ndarray) -> tuple[float, float]:
    # n - 1 denominator; one value has no spread, reported as 0
    sd = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return float(values.mean()), sd


def aggregate(metrics: Sequence[RunMetrics]) -> CampaignStats:
    """Table-style summary of a set of runs."""
    if not metrics:
        raise ValueError("cannot aggregate an empty set of runs")
    n = len(metrics)
    hmd = np.array([m.hmd for m in metrics])
    afd_ = np.array([m.afd for m in metrics])
    hm, hs = _mean_sd(hmd)
    am, as_ = _mean_sd(afd_)
    return CampaignStats(
        n_runs=n,
        ldwc_pct=100.0 * sum(m.ldwc for m in metrics) / n,
        nmac_pct=100.0 * sum(m.nmac for m in metrics) / n,
        hmd_mean=hm,
        hmd_sd=hs,
        afd_mean=am,
        afd_sd=as_,
    )
