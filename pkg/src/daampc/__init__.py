"""Intent-aware model predictive detect-and-avoid for fixed-wing aircraft.

The package simulates pairwise encounters in which each equipped aircraft
solves a receding-horizon optimal control problem against Dubins-path
predictions of the other aircraft, under response delays and correlated
sensor errors, and scores the outcomes with standard well-clear metrics.
"""

__version__ = "0.1.0"

from .kinematics import AircraftParams, AircraftState, Trajectory, rollout, step, wrap_angle
from .dubins import DubinsPath, solve_dubins, sample_map
from .ocp import OcpProblem, OcpSolution, OcpWeights, build, solve
from .delay_policy import DelayModel, PolicyKind
from .encounter import EncounterConfig, RunRecord, make_encounter, run, run_campaign
from .metrics import WellClearParams, RunMetrics, CampaignStats, aggregate, compute_metrics

__all__ = [
    "AircraftParams", "AircraftState", "Trajectory", "rollout", "step", "wrap_angle",
    "DubinsPath", "solve_dubins", "sample_map",
    "OcpProblem", "OcpSolution", "OcpWeights", "build", "solve",
    "DelayModel", "PolicyKind",
    "EncounterConfig", "RunRecord", "make_encounter", "run", "run_campaign",
    "WellClearParams", "RunMetrics", "CampaignStats", "aggregate", "compute_metrics",
]
