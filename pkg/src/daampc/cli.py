"""Command line entry point: ``daampc run|replay|single|validate|bench``."""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .campaign import (
    OUTPUT_ENV,
    SpecError,
    parse_spec,
    replay,
    run_spec,
    stats_table,
    trajectory_table,
    write_results,
    atomic_write,
)
from .core import BACKENDS, get_backend
from .delay_policy import DELAY_KINDS, DelayModel, PolicyKind, sample_delays
from .encounter import AC2_SPEEDS_KT, EQUIPPAGE, HEADINGS_DEG, make_encounter, run
from .metrics import compute_metrics, heading_total_variation, target_distances
from .sensing import POSITION_SD, VELOCITY_SD, AUTOCORRELATION, Ar1Process

log = logging.getLogger("daampc")


def _backend(args) -> None:
    if getattr(args, "backend", None):
        os.environ["DAAMPC_BACKEND"] = args.backend
        get_backend(args.backend)


def cmd_run(args) -> int:
    spec = parse_spec(args.spec)
    if args.out:
        spec = spec.__class__(**{**spec.__dict__, "output_dir": args.out})
    out = spec.resolved_output()
    t0 = time.perf_counter()
    results, stats = run_spec(spec, workers=args.workers)
    manifest = write_results(results, stats, out, spec)
    sys.stdout.write(stats_table(stats))
    log.info("campaign finished in %.1f s; manifest %s", time.perf_counter() - t0, manifest)
    return 0


def cmd_replay(args) -> int:
    manifest = replay(args.manifest, args.out, workers=args.workers)
    print((Path(args.out) / "stats.csv").read_text(), end="")
    log.info("replayed into %s", manifest.parent)
    return 0


def cmd_single(args) -> int:
    cfg = make_encounter(
        args.heading, args.ac2_speed, delay=args.delay, policy=args.policy,
        equippage=args.equippage, sensor_errors=args.sensor_errors,
        horizon=args.horizon, sim_length=args.sim_length, time_to_cpa=args.time_to_cpa,
        seed=args.seed,
    )
    t0 = time.perf_counter()
    rec = run(cfg)
    m = compute_metrics(rec, interpolate=args.interpolate)
    print(f"heading {cfg.relative_heading:g} deg, AC2 {cfg.ac2_speed_kt:g} kt, "
          f"delay {cfg.delay.kind}, policy {cfg.policy.value}, equippage {cfg.equippage}, "
          f"sensor errors {'on' if cfg.sensor_errors else 'off'}, seed {cfg.seed}")
    print(f"  LDWC {'yes' if m.ldwc else 'no'}  NMAC {'yes' if m.nmac else 'no'}  "
          f"HMD {m.hmd:.1f} m  AFD {m.afd:.1f} m")
    print(f"  delays {[round(d, 3) for d in rec.delays]} s, lags {rec.lags} steps")
    tv = heading_total_variation(rec)
    td = target_distances(rec)
    for i, a in enumerate(cfg.aircraft):
        times = rec.solve_time[i]
        solved = times[~np.isnan(times)]
        extra = (f", mean solve {1e3 * solved.mean():.2f} ms, failures "
                 f"{sum(s == 'infeasible_subproblem' for s in rec.solver_status[i])}"
                 if solved.size else " (unequipped)")
        print(f"  {a.name}: heading variation {math.degrees(tv[i]):.1f} deg, "
              f"final distance to target {td[i]:.1f} m{extra}")
    if args.out:
        path = Path(args.out)
        atomic_write(path, trajectory_table(rec))
        print(f"  trajectory written to {path}")
    log.info("run took %.2f s", time.perf_counter() - t0)
    return 0


def _check(name: str, ok: bool, detail: str) -> bool:
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok


def cmd_validate(args) -> int:
    """Statistical self-checks of the delay and sensor models plus a solver smoke test."""
    rng = np.random.default_rng(args.seed)
    n = args.samples
    ok = True
    d = sample_delays(DelayModel("stochastic"), rng, n)
    p_lo, p_hi = float((d < 1).mean()), float((d > 12).mean())
    ok &= _check("delay P(d<1)", 0.0137 <= p_lo <= 0.0197, f"{p_lo:.4f} in [0.0137, 0.0197]")
    ok &= _check("delay P(d>12)", 0.0109 <= p_hi <= 0.0169, f"{p_hi:.4f} in [0.0109, 0.0169]")
    for name, sd in (("position", POSITION_SD), ("velocity", VELOCITY_SD)):
        x = Ar1Process(sd).simulate(rng, n)
        est = float(np.sqrt((x ** 2).mean()))
        a = float((x[1:] * x[:-1]).sum() / (x[:-1] ** 2).sum())
        ok &= _check(f"{name} error SD", abs(est / sd - 1) <= 0.02, f"{est:.3f} vs {sd} (2%)")
        ok &= _check(f"{name} error lag-1 autocorrelation", abs(a - AUTOCORRELATION) <= 0.002,
                     f"{a:.5f} vs {AUTOCORRELATION} (0.002)")
    rec = run(make_encounter(180.0, horizon=40, sim_length=160, time_to_cpa=80))
    m = compute_metrics(rec)
    ok &= _check("solver smoke encounter", not m.nmac and rec.failures() == 0,
                 f"HMD {m.hmd:.0f} m, {rec.failures()} solver failures")
    return 0 if ok else 1


def cmd_bench(args) -> int:
    """Per-step solve-time statistics for one encounter on each backend."""
    names = [args.backend] if args.backend else [b for b in BACKENDS if _available(b)]
    for name in names:
        os.environ["DAAMPC_BACKEND"] = name
        cfg = make_encounter(args.heading, horizon=args.horizon, sim_length=args.sim_length,
                             time_to_cpa=args.sim_length / 2, equippage="all")
        t0 = time.perf_counter()
        rec = run(cfg)
        wall = time.perf_counter() - t0
        st = rec.solve_time[~np.isnan(rec.solve_time)]
        q = np.percentile(st, [50, 95, 99]) * 1e3
        print(f"{name:9s} steps {cfg.sim_length} N {cfg.horizon}: solve ms mean {1e3 * st.mean():.2f} "
              f"p50 {q[0]:.2f} p95 {q[1]:.2f} p99 {q[2]:.2f} max {1e3 * st.max():.2f}; "
              f"run {wall:.1f} s for {cfg.sim_length * cfg.sample_time:g} s simulated")
    return 0


def _available(name: str) -> bool:
    try:
        get_backend(name)
        return True
    except ImportError:
        return False


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="daampc", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--backend", choices=BACKENDS, help="numerical kernel backend")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a campaign (default campaign without a file)")
    r.add_argument("spec", nargs="?", help="YAML campaign file")
    r.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./results)")
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("replay", help="re-run a campaign from its manifest")
    rp.add_argument("manifest")
    rp.add_argument("--out", required=True)
    rp.add_argument("--workers", type=int, default=1)
    rp.set_defaults(func=cmd_replay)

    s = sub.add_parser("single", help="simulate one encounter and print its metrics")
    s.add_argument("--heading", type=float, default=90.0, choices=HEADINGS_DEG)
    s.add_argument("--ac2-speed", type=float, default=120.0, choices=AC2_SPEEDS_KT)
    s.add_argument("--delay", default="auto", choices=DELAY_KINDS)
    s.add_argument("--policy", default="delay", choices=[k.value for k in PolicyKind])
    s.add_argument("--equippage", default="all", choices=EQUIPPAGE)
    s.add_argument("--sensor-errors", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--horizon", type=int, default=120)
    s.add_argument("--sim-length", type=int, default=600)
    s.add_argument("--time-to-cpa", type=float, default=300.0)
    s.add_argument("--interpolate", action="store_true", help="interpolate the CPA within steps")
    s.add_argument("--out", help="write the trajectory table to this CSV file")
    s.set_defaults(func=cmd_single)

    v = sub.add_parser("validate", help="statistical and solver self-checks")
    v.add_argument("--samples", type=int, default=1_000_000)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench", help="per-step solve-time report")
    b.add_argument("--heading", type=float, default=90.0, choices=HEADINGS_DEG)
    b.add_argument("--horizon", type=int, default=120)
    b.add_argument("--sim-length", type=int, default=600)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _backend(args)
        return args.func(args)
    except (SpecError, ValueError, OSError, ImportError) as exc:
        print(f"daampc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
