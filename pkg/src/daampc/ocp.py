"""Per-aircraft intent-aware MPC problem: transcription and SQP solution.

The optimisation problem over a horizon of N steps is

    min  |s_N - s_f|^2_Qf + sum_k |s_k - ref_k|^2_Q
         + sum_{k>=1} R (u_k - u_{k-1})^2 + w sum_k eps_k^2
    s.t. s_{k+1} = s_k + t_e [v cos sigma_k, v sin sigma_k, u_k]
         rho^2 - eps_k <= |p_k - p^j_k|^2   for every intruder j
         eps_k >= 0,  u_min <= u_k <= u_max,  s_0 = current state

``build`` produces the full direct transcription (inputs, states and slacks
as decision variables). ``solve`` runs an SQP method on it. The linearised
dynamics are condensed into the inputs, and the QP Hessian is the
Lagrangian curvature of each stage, projected to be positive definite.
Every trial point is made dynamics-feasible by rollout with the slacks
at their optimal values, so an Armijo backtracking search on the
objective alone globalises the iteration.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from .core import get_backend
from .dubins import ReferenceTrajectory, rate_of_turn_profile, solve_dubins
from .kinematics import AircraftParams, AircraftState, wrap_angles

CONVERGED = "converged"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible_subproblem"


@dataclass(frozen=True)
class OcpWeights:
    Q: np.ndarray = field(default_factory=lambda: 500.0 * np.eye(3))
    Q_f: np.ndarray = field(default_factory=lambda: 500.0 * np.eye(3))
    R: float = 1000.0
    slack_weight: float = 1.0

    def __post_init__(self):
        for name in ("Q", "Q_f"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (3, 3) or not np.allclose(m, m.T):
                raise ValueError(f"{name} must be a symmetric 3x3 matrix")
            if np.linalg.eigvalsh(m).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
            object.__setattr__(self, name, m)
        if not self.R > 0 or not self.slack_weight > 0:
            raise ValueError("R and slack_weight must be positive")


@dataclass
class OcpProblem:
    horizon: int
    own_initial: AircraftState
    own_target: AircraftState
    own_reference: ReferenceTrajectory
    intruder_predictions: Sequence[ReferenceTrajectory]
    separation: float
    params: AircraftParams
    weights: OcpWeights = field(default_factory=OcpWeights)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.separation > 0:
            raise ValueError("separation must be positive")
        for ref in [self.own_reference, *self.intruder_predictions]:
            if len(ref) < self.horizon:
                raise ValueError("reference shorter than the horizon")


@dataclass
class WarmStart:
    inputs: np.ndarray
    slacks: np.ndarray


@dataclass
class OcpSolution:
    inputs: np.ndarray  # (N,)
    states: np.ndarray  # (N+1, 3), headings wrapped
    slacks: np.ndarray  # (N,)
    objective: float
    solver_status: str
    iterations: int = 0
    kkt: float = float("nan")
    solve_time: float = 0.0

    def state(self, k: int) -> AircraftState:
        return AircraftState.from_array(self.states[k])

    @property
    def ok(self) -> bool:
        return self.solver_status != INFEASIBLE


class TranscribedNlp:
    """Direct transcription of one aircraft's MPC problem.

    Decision vector ``z = [u_0..u_{N-1}, s_1..s_N, eps_0..eps_{N-1}]`` with
    each state as (x, y, heading). Inequalities are in ``g(z) >= 0`` form,
    ordered separation rows (intruder-major), slack signs, lower then upper
    input bounds.
    """

    def __init__(self, problem: OcpProblem):
        n = problem.horizon
        self.problem = problem
        self.N = n
        self.s0 = problem.own_initial.as_array()
        self.target = problem.own_target.as_array()
        self.ref = np.ascontiguousarray(problem.own_reference.poses[:n], dtype=float)
        preds = [p.poses[:n, :2] for p in problem.intruder_predictions]
        self.intr = np.ascontiguousarray(
            np.array(preds, dtype=float).reshape(len(preds), n, 2)
        )
        self.M = len(preds)
        p = problem.params
        self.v, self.te = p.speed, p.sample_time
        self.lo, self.hi = p.turn_rate_min, p.turn_rate_max
        w = problem.weights
        self.Q, self.Qf, self.R, self.w = w.Q, w.Q_f, float(w.R), float(w.slack_weight)
        self.rho2 = float(problem.separation) ** 2

    # dimensions
    @property
    def n_vars(self) -> int:
        return 5 * self.N

    @property
    def n_eq(self) -> int:
        return 3 * self.N

    @property
    def n_sep(self) -> int:
        return self.M * self.N

    @property
    def n_ineq(self) -> int:
        return self.n_sep + 3 * self.N

    def pack(self, u, states, eps) -> np.ndarray:
        return np.concatenate([u, np.asarray(states)[1:].reshape(-1), eps])

    def unpack(self, z):
        n = self.N
        u = z[:n]
        s = np.vstack([self.s0, z[n:4 * n].reshape(n, 3)])
        return u, s, z[4 * n:]

    def _errors(self, s):
        n = self.N
        e = np.empty((n + 1, 3))
        e[:n] = s[:n] - self.ref
        e[n] = s[n] - self.target
        e[:, 2] = wrap_angles(e[:, 2])
        return e

    def objective(self, z) -> float:
        u, s, eps = self.unpack(z)
        e = self._errors(s)
        n = self.N
        f = np.einsum("ka,ab,kb->", e[:n], self.Q, e[:n]) + e[n] @ self.Qf @ e[n]
        du = np.diff(u)
        return float(f + self.R * du @ du + self.w * eps @ eps)

    def gradient(self, z) -> np.ndarray:
        u, s, eps = self.unpack(z)
        n = self.N
        e = self._errors(s)
        gs = np.empty((n, 3))
        gs[: n - 1] = 2.0 * e[1:n] @ self.Q
        gs[n - 1] = 2.0 * self.Qf @ e[n]
        gu = np.zeros(n)
        du = np.diff(u)
        gu[1:] += 2 * self.R * du
        gu[:-1] -= 2 * self.R * du
        return np.concatenate([gu, gs.reshape(-1), 2.0 * self.w * eps])

    def equality(self, z) -> np.ndarray:
        u, s, _ = self.unpack(z)
        te, v = self.te, self.v
        step = np.column_stack([te * v * np.cos(s[:-1, 2]), te * v * np.sin(s[:-1, 2]), te * u])
        return (s[1:] - s[:-1] - step).reshape(-1)

    def eq_jacobian(self, z) -> np.ndarray:
        u, s, _ = self.unpack(z)
        n, te, v = self.N, self.te, self.v
        J = np.zeros((3 * n, self.n_vars))
        for k in range(n):
            rows = slice(3 * k, 3 * k + 3)
            J[3 * k + 2, k] = -te
            J[rows, n + 3 * k:n + 3 * k + 3] = np.eye(3)
            if k >= 1:
                cols = slice(n + 3 * (k - 1), n + 3 * k)
                blk = -np.eye(3)
                blk[0, 2] = te * v * math.sin(s[k, 2])
                blk[1, 2] = -te * v * math.cos(s[k, 2])
                J[rows, cols] = blk
        return J

    def inequality(self, z) -> np.ndarray:
        u, s, eps = self.unpack(z)
        n = self.N
        if self.M:
            d2 = ((s[None, :n, :2] - self.intr) ** 2).sum(axis=2)
            sep = (d2 - self.rho2 + eps[None, :]).reshape(-1)
        else:
            sep = np.zeros(0)
        return np.concatenate([sep, eps, u - self.lo, self.hi - u])

    def ineq_jacobian(self, z) -> np.ndarray:
        u, s, _ = self.unpack(z)
        n = self.N
        J = np.zeros((self.n_ineq, self.n_vars))
        for j in range(self.M):
            for k in range(n):
                row = j * n + k
                J[row, 4 * n + k] = 1.0
                if k >= 1:
                    c = n + 3 * (k - 1)
                    J[row, c:c + 2] = 2.0 * (s[k, :2] - self.intr[j, k])
        base = self.n_sep
        J[base + np.arange(n), 4 * n + np.arange(n)] = 1.0
        J[base + n + np.arange(n), np.arange(n)] = 1.0
        J[base + 2 * n + np.arange(n), np.arange(n)] = -1.0
        return J

    def kernel_args(self):
        return (self.v, self.te, self.ref, self.target, self.intr,
                self.Q, self.Qf, self.R, self.w, self.rho2)


def build(problem: OcpProblem) -> TranscribedNlp:
    return TranscribedNlp(problem)


def cold_start(nlp: TranscribedNlp) -> WarmStart:
    """Turn-rate profile of the own Dubins reference, slacks from its rollout."""
    prob = nlp.problem
    path = solve_dubins(prob.own_initial, prob.own_target, prob.params.turn_radius)
    u = rate_of_turn_profile(path, prob.params, nlp.N)
    kern = get_backend()
    _, states, eps = kern.evaluate(nlp.s0, u, *nlp.kernel_args())
    return WarmStart(u, eps)


def shift_warm_start(previous: OcpSolution) -> WarmStart:
    u = np.append(previous.inputs[1:], previous.inputs[-1])
    e = np.append(previous.slacks[1:], previous.slacks[-1])
    return WarmStart(u, e)


# Inputs this close to a bound (relative to the box width) count as on it.
# The interior-point QP stops a hair inside active bounds; a much looser
# value would snap genuine small moves away from a bound back onto it.
_ACTIVE_TOL = 1e-10


def _stationarity(u, grad, lo, hi):
    tol = _ACTIVE_TOL * (hi - lo)
    pg = grad.copy()
    at_lo = u <= lo + tol
    at_hi = u >= hi - tol
    pg[at_lo] = np.minimum(grad[at_lo], 0.0)
    pg[at_hi] = np.maximum(grad[at_hi], 0.0)
    return float(np.abs(pg).max()) if pg.size else 0.0


def _snap(u, lo, hi):
    """Clip to the box and put inputs the interior-point QP left a hair
    inside a bound exactly on it, so the active set is recognised."""
    tol = _ACTIVE_TOL * (hi - lo)
    u = np.clip(u, lo, hi)
    u[u <= lo + tol] = lo
    u[u >= hi - tol] = hi
    return u


def _break_symmetry(nlp, u, states, eps):
    """Deterministic right turn when the worst conflict is exactly collinear.

    On a collinear head-on prediction the separation gradient has no lateral
    component and the SQP iteration cannot leave the straight path.
    """
    if nlp.M == 0 or eps.max() <= 0.0:
        return u, False
    k = int(eps.argmax())
    d2 = ((states[None, k, :2] - nlp.intr[:, k]) ** 2).sum(axis=1)
    j = int(d2.argmin())
    rel = states[k, :2] - nlp.intr[j, k]
    h = states[k, 2]
    lateral = math.cos(h) * rel[1] - math.sin(h) * rel[0]
    if abs(lateral) >= 1e-3:
        return u, False
    u = u.copy()
    u[: max(k, 1)] -= 0.1 * min(-nlp.lo, nlp.hi)
    return np.clip(u, nlp.lo, nlp.hi), True


def solve(
    nlp: TranscribedNlp,
    warm: WarmStart | None = None,
    tol: float = 1e-6,
    max_iter: int = 50,
    trace: TextIO | None = None,
    backend: str | None = None,
) -> OcpSolution:
    """SQP with Armijo backtracking on the objective of rollout-feasible iterates.

    ``tol`` bounds the scaled KKT residual: the infinity norm of the
    projected reduced gradient times the input range, divided by the cost of
    a one-step position offset held over the whole horizon. The objective
    itself carries a large constant terminal term, so it is no use as a
    scale.
    """
    t0 = time.perf_counter()
    kern = get_backend(backend)
    args = nlp.kernel_args()
    if warm is None:
        warm = cold_start(nlp)
    if len(warm.inputs) != nlp.N or len(warm.slacks) != nlp.N:
        raise ValueError("warm start length does not match the horizon")
    u = np.clip(np.asarray(warm.inputs, dtype=float), nlp.lo, nlp.hi)
    f, states, eps = kern.evaluate(nlp.s0, u, *args)
    u, moved = _break_symmetry(nlp, u, states, eps)
    if moved:
        f, states, eps = kern.evaluate(nlp.s0, u, *args)
    uscale = max(-nlp.lo, nlp.hi)
    fscale = nlp.N * float(np.trace(nlp.Q)) / 3.0 * (nlp.v * nlp.te) ** 2
    status, kkt, it = MAX_ITER, float("inf"), 0
    if trace is not None:
        trace.write("iter,objective,kkt,step_norm\n")
    for it in range(1, max_iter + 1):
        grad = kern.gradient(states, u, *args)
        kkt = _stationarity(u, grad, nlp.lo, nlp.hi) * uscale / fscale
        if kkt <= tol:
            status = CONVERGED
            if trace is not None:
                trace.write(f"{it},{f!r},{kkt!r},0.0\n")
            break
        d, qst, _ = kern.qp_step(states, u, *args, nlp.lo, nlp.hi)
        if qst == 2:
            status = INFEASIBLE
            break
        slope = float(grad @ d)
        alpha = 1.0
        accepted = False
        if slope < 0.0:
            while alpha > 1e-8:
                un = _snap(u + alpha * d, nlp.lo, nlp.hi)
                fn, sn, en = kern.evaluate(nlp.s0, un, *args)
                if fn <= f + 1e-4 * alpha * slope:
                    accepted = True
                    break
                alpha *= 0.5
        step = float(np.abs(alpha * d).max()) if accepted else 0.0
        if trace is not None:
            trace.write(f"{it},{f!r},{kkt!r},{step!r}\n")
        if not accepted:
            # A predicted change below the objective's rounding level means
            # the iterate is stationary at working precision.
            noise = 1e-10 * max(abs(f), fscale)
            status = CONVERGED if abs(slope) <= noise or kkt <= 1e3 * tol else MAX_ITER
            break
        u, f, states, eps = un, fn, sn, en
        if step <= 1e-12 * uscale:
            status = CONVERGED
            break
    st = states.copy()
    st[:, 2] = wrap_angles(st[:, 2])
    st[0] = nlp.s0
    return OcpSolution(
        inputs=u, states=st, slacks=eps, objective=float(f), solver_status=status,
        iterations=it, kkt=kkt, solve_time=time.perf_counter() - t0,
    )


def turn_sense(sol: OcpSolution, fraction: float = 0.25) -> float:
    """Net heading change (rad) over the leading part of the horizon."""
    n = max(1, int(round(fraction * len(sol.inputs))))
    return float(sol.inputs[:n].sum())


def solve_multistart(
    nlp: TranscribedNlp,
    starts: Sequence[WarmStart | None],
    tol: float = 1e-6,
    max_iter: int = 50,
    backend: str | None = None,
    right_margin: float = 0.0,
) -> OcpSolution:
    """Solve from each start and keep the best local solution.

    ``None`` in ``starts`` means the cold start. The first start is solved
    alone when its solution predicts no separation conflict. Among
    successful solves the smallest objective wins, ties going to the earlier start. With
    ``right_margin`` > 0 a right-turning solution (negative net heading
    change early in the horizon) beats a cheaper left-turning one whenever
    its objective is within that relative margin: the right-hand rule. An
    infinite margin makes any converged right-turning solution win.
    Identical decentralised controllers need some handedness to resolve
    mirror-symmetric encounters, where the minimum-cost choice of one
    aircraft mirrors that of the other. The reported solve time covers all
    starts.
    """
    if not starts:
        raise ValueError("no start given")
    t0 = time.perf_counter()
    sols = [solve(nlp, starts[0], tol=tol, max_iter=max_iter, backend=backend)]
    # Without a predicted conflict the problem is a pure tracking problem
    # and the remaining starts lead to the same solution.
    if not (sols[0].ok and sols[0].slacks.max() <= 0.0):
        sols += [solve(nlp, w, tol=tol, max_iter=max_iter, backend=backend) for w in starts[1:]]
    ok = [s for s in sols if s.ok] or sols[:1]
    best = min(ok, key=lambda s: s.objective)
    if right_margin > 0 and turn_sense(best) > 0:
        right = [s for s in ok if turn_sense(s) < 0]
        if right:
            cand = min(right, key=lambda s: s.objective)
            if math.isinf(right_margin) or cand.objective <= (1.0 + right_margin) * best.objective:
                best = cand
    best.solve_time = time.perf_counter() - t0
    return best


def solve_problem(problem: OcpProblem, warm: WarmStart | None = None, **kw) -> OcpSolution:
    return solve(build(problem), warm, **kw)
