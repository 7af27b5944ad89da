"""Time the solver kernels on the pure-Python and compiled backends.

    python benchmarks/bench_kernels.py [--horizon 120] [--intruders 1] [--repeat 5]

Each kernel is timed on the same crossing-encounter problem; the table
reports the best-of-``repeat`` mean time per call and the speedup of the
compiled backend.
"""
from __future__ import annotations

import argparse
import math
import timeit

import numpy as np

from daampc.core import BACKENDS
from daampc.dubins import sample_map
from daampc.kinematics import NM, AircraftParams, AircraftState
from daampc.ocp import OcpProblem, build, cold_start, solve


def crossing_nlp(n: int, n_intruders: int):
    params = AircraftParams(61.7)
    own = AircraftState(0.0, 0.0, 0.0)
    goal = AircraftState(2 * n * params.step_length, 0.0, 0.0)
    preds = []
    for j in range(n_intruders):
        # intruders cross the own track near mid-horizon from alternating sides
        side = 1.0 if j % 2 == 0 else -1.0
        x = (0.5 + 0.1 * j) * n * params.step_length
        start = AircraftState(x, -side * 0.5 * n * params.step_length, side * math.pi / 2)
        end = AircraftState(x, side * 2 * n * params.step_length, side * math.pi / 2)
        preds.append(sample_map(start, end, params, n))
    return build(OcpProblem(n, own, goal, sample_map(own, goal, params, n), preds, 1.8 * NM, params))


def bench(nlp, repeat: int) -> dict[str, dict[str, float]]:
    u = cold_start(nlp).inputs + 0.001 * np.sin(np.arange(nlp.N))
    u = np.clip(u, nlp.lo, nlp.hi)
    args = nlp.kernel_args()
    out = {}
    for name, kern in BACKENDS.items():
        _, states, _ = kern.evaluate(nlp.s0, u, *args)
        calls = {
            "rollout": lambda: kern.rollout(nlp.s0, u, nlp.v, nlp.te),
            "evaluate": lambda: kern.evaluate(nlp.s0, u, *args),
            "gradient": lambda: kern.gradient(states, u, *args),
            "stage_hessians": lambda: kern.stage_hessians(states, u, *args),
            "qp_step": lambda: kern.qp_step(states, u, *args, nlp.lo, nlp.hi),
            "solve": lambda: solve(nlp, backend=name),
        }
        res = {}
        for label, fn in calls.items():
            timer = timeit.Timer(fn)
            number, _ = timer.autorange()
            res[label] = min(timer.repeat(repeat, number)) / number
        out[name] = res
    return out


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--horizon", type=int, default=120)
    p.add_argument("--intruders", type=int, default=1)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    nlp = crossing_nlp(args.horizon, args.intruders)
    res = bench(nlp, args.repeat)
    names = list(res)
    print(f"horizon {args.horizon}, {args.intruders} intruder(s); ms per call")
    print(f"{'kernel':16s}" + "".join(f"{n:>12s}" for n in names)
          + ("     speedup" if "compiled" in res else ""))
    for label in res[names[0]]:
        row = f"{label:16s}" + "".join(f"{1e3 * res[n][label]:12.4f}" for n in names)
        if "compiled" in res:
            row += f"{res['pure'][label] / res['compiled'][label]:11.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
