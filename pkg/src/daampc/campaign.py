"""Campaign files, result bundles and manifest replay.

A campaign file is YAML. Every key is optional; an empty file gives the
default grid of 8 deterministic encounters (4 headings x 2 speeds) for
each of the three fixed delay kinds and both equippage modes. Example::

    headings: [45, 90]
    delays: [slow, stochastic]
    equippage: [all]
    sensor_errors: false
    policy: delay
    monte_carlo_runs: 10
    seed_root: 7
    weights: {q: 500, qf: 500, r: 1000, slack_weight: 1}
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .core import get_backend
from .delay_policy import DELAY_KINDS, DelayModel, PolicyKind
from .encounter import (
    AC2_SPEEDS_KT,
    EQUIPPAGE,
    HEADINGS_DEG,
    EncounterConfig,
    RunRecord,
    make_encounter,
    run_campaign,
)
from .kinematics import NM
from .metrics import CampaignStats, aggregate, compute_metrics, pair_distances
from .ocp import OcpWeights

OUTPUT_ENV = "DAAMPC_OUTPUT_DIR"
DEFAULT_OUTPUT = "results"


class SpecError(ValueError):
    """Invalid campaign file; the message names the file, line and field."""


@dataclass(frozen=True)
class WeightSpec:
    q: float = 500.0
    qf: float = 500.0
    r: float = 1000.0
    slack_weight: float = 1.0

    def build(self) -> OcpWeights:
        return OcpWeights(self.q * np.eye(3), self.qf * np.eye(3), self.r, self.slack_weight)


@dataclass(frozen=True)
class CampaignSpec:
    headings: tuple[float, ...] = HEADINGS_DEG
    speeds: tuple[float, ...] = AC2_SPEEDS_KT
    delays: tuple[str, ...] = ("auto", "quick", "slow")
    equippage: tuple[str, ...] = ("partial", "all")
    sensor_errors: bool = False
    policy: str = "delay"
    horizon: int = 120
    rho_nm: float = 1.8
    sim_length: int = 600
    time_to_cpa: float = 300.0
    weights: WeightSpec = field(default_factory=WeightSpec)
    solver_tol: float = 1e-6
    solver_max_iter: int = 50
    cold_restart: bool = True
    right_margin: float = math.inf
    interpolate_cpa: bool = False
    monte_carlo_runs: int = 10
    seed_root: int = 0
    output_dir: str | None = None

    def rows(self) -> list[tuple[str, list[EncounterConfig]]]:
        """Scenario rows of the stats table: one per (equippage, delay)."""
        out = []
        for eq in self.equippage:
            for delay in self.delays:
                cfgs = [
                    make_encounter(
                        hd, sp,
                        time_to_cpa=self.time_to_cpa,
                        sim_length=self.sim_length,
                        delay=delay,
                        policy=self.policy,
                        equippage=eq,
                        sensor_errors=self.sensor_errors,
                        horizon=self.horizon,
                        separation=self.rho_nm * NM,
                        weights=self.weights.build(),
                        solver_tol=self.solver_tol,
                        solver_max_iter=self.solver_max_iter,
                        cold_restart=self.cold_restart,
                        right_margin=self.right_margin,
                    )
                    for sp in self.speeds
                    for hd in self.headings
                ]
                noise = "noisy" if self.sensor_errors else "exact"
                out.append((f"{eq}-{delay}-{self.policy}-{noise}", cfgs))
        return out

    def resolved_output(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


_LIST_CHOICES = {
    "headings": HEADINGS_DEG,
    "speeds": AC2_SPEEDS_KT,
    "delays": DELAY_KINDS,
    "equippage": EQUIPPAGE,
}
_ALIASES = {"heading": "headings", "speed": "speeds", "delay": "delays"}
_POSITIVE = ("rho_nm", "time_to_cpa", "solver_tol")
_POSITIVE_INT = ("horizon", "sim_length", "solver_max_iter", "monte_carlo_runs")


def _key_lines(text: str) -> dict[tuple[str, ...], int]:
    """1-based line of every mapping key, keyed by its path."""
    lines: dict[tuple[str, ...], int] = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = (*prefix, str(k.value))
                lines[path] = k.start_mark.line + 1
                walk(v, path)

    walk(yaml.compose(text), ())
    return lines


def _as_list(value, name, where):
    if not isinstance(value, list):
        value = [value]
    if not value:
        raise SpecError(f"{where}: {name}: must not be empty")
    return value


def _check_number(value, name, where, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecError(f"{where}: {name}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise SpecError(f"{where}: {name}: expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise SpecError(f"{where}: {name}: must be finite")
    return int(value) if integer else float(value)


def parse_spec_text(text: str, source: str = "<spec>") -> CampaignSpec:
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(text) if data else {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"{source}:{mark.line + 1}" if mark is not None else source
        raise SpecError(f"{loc}: malformed file: {getattr(exc, 'problem', exc)}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise SpecError(f"{source}: top level must be a mapping of keys to values")

    def where(*path):
        line = lines.get(path)
        return f"{source}:{line}" if line else source

    fields = {f.name for f in dataclasses.fields(CampaignSpec)}
    kw: dict[str, Any] = {}
    for raw_key, value in data.items():
        key = _ALIASES.get(str(raw_key), str(raw_key))
        loc = where(str(raw_key))
        if key not in fields:
            raise SpecError(f"{loc}: unknown key {raw_key!r}")
        if key in kw:
            raise SpecError(f"{loc}: {key}: given twice")
        if key in _LIST_CHOICES:
            items = _as_list(value, key, loc)
            choices = _LIST_CHOICES[key]
            conv = []
            for it in items:
                v = it if key in ("delays", "equippage") else _check_number(it, key, loc)
                if v not in choices:
                    raise SpecError(f"{loc}: {key}: {it!r} is not one of {list(choices)}")
                conv.append(v)
            kw[key] = tuple(conv)
        elif key == "weights":
            if not isinstance(value, dict):
                raise SpecError(f"{loc}: weights: expected a mapping")
            wf = {f.name for f in dataclasses.fields(WeightSpec)}
            wkw = {}
            for wk, wv in value.items():
                wloc = where(str(raw_key), str(wk))
                if wk not in wf:
                    raise SpecError(f"{wloc}: unknown key 'weights.{wk}'")
                wv = _check_number(wv, f"weights.{wk}", wloc)
                if wv <= 0:
                    raise SpecError(f"{wloc}: weights.{wk}: must be positive, got {wv!r}")
                wkw[wk] = wv
            kw[key] = WeightSpec(**wkw)
        elif key in ("sensor_errors", "cold_restart", "interpolate_cpa"):
            if not isinstance(value, bool):
                raise SpecError(f"{loc}: {key}: expected true or false, got {value!r}")
            kw[key] = value
        elif key == "policy":
            try:
                kw[key] = PolicyKind(value).value
            except ValueError:
                raise SpecError(f"{loc}: policy: {value!r} is not one of "
                                f"{[p.value for p in PolicyKind]}") from None
        elif key == "output_dir":
            if value is not None and not isinstance(value, str):
                raise SpecError(f"{loc}: output_dir: expected a path string")
            kw[key] = value
        elif key == "right_margin":
            if (isinstance(value, bool) or not isinstance(value, (int, float))
                    or math.isnan(value) or value < 0):
                raise SpecError(f"{loc}: right_margin: expected a non-negative number or .inf, "
                                f"got {value!r}")
            kw[key] = float(value)
        elif key in _POSITIVE_INT or key == "seed_root":
            v = _check_number(value, key, loc, integer=True)
            if key == "seed_root" and v < 0:
                raise SpecError(f"{loc}: seed_root: must be non-negative, got {v}")
            if key != "seed_root" and v < 1:
                raise SpecError(f"{loc}: {key}: must be >= 1, got {v}")
            kw[key] = v
        else:
            v = _check_number(value, key, loc)
            if key in _POSITIVE and v <= 0:
                raise SpecError(f"{loc}: {key}: must be positive, got {value!r}")
            kw[key] = v
    spec = CampaignSpec(**kw)
    if not 0 < spec.time_to_cpa < spec.sim_length:
        raise SpecError(f"{where('time_to_cpa')}: time_to_cpa: must lie in (0, sim_length)")
    return spec


def parse_spec(path: str | os.PathLike | None) -> CampaignSpec:
    """Read a campaign file; ``None`` gives the default campaign."""
    if path is None:
        return CampaignSpec()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SpecError(f"{path}: cannot read: {exc.strerror}") from None
    return parse_spec_text(text, str(path))


def dump_spec(spec: CampaignSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=True)


# -- results ---------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return ""
    return format(x, ".17g")


def _pct(x: float) -> str:
    return f"{x:.3f}"


def atomic_write(path: Path, data: str | bytes) -> None:
    """Write via a temporary file in the same directory and rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def run_name(record: RunRecord) -> str:
    c = record.config
    key = "-".join(str(k) for k in c.spawn_key) or "0"
    return f"h{c.relative_heading:g}_v{c.ac2_speed_kt:g}_{c.equippage}_{c.delay.kind}_r{key}"


def trajectory_table(record: RunRecord) -> str:
    n = record.n_aircraft
    pos = record.positions()
    hdg = record.headings()
    dist = pair_distances(record)
    T = record.config.sim_length
    header = ["t"]
    for i in range(n):
        p = f"ac{i + 1}_"
        header += [p + "x", p + "y", p + "heading", p + "u", p + "solve_s", p + "status"]
    header += [f"dist_{i + 1}_{j + 1}" for i in range(n) for j in range(i + 1, n)]
    rows = [header]
    for t in range(T + 1):
        row = [_fmt(t * record.config.sample_time)]
        for i in range(n):
            last = t == T
            row += [
                _fmt(pos[i, t, 0]), _fmt(pos[i, t, 1]), _fmt(hdg[i, t]),
                "" if last else _fmt(record.applied_u[i, t]),
                "" if last else _fmt(record.solve_time[i, t]),
                "" if last else record.solver_status[i][t],
            ]
        row += [_fmt(d) for d in dist[:, t]]
        rows.append(row)
    return _csv(rows)


STATS_HEADER = ["scenario", "runs", "ldwc_pct", "nmac_pct", "hmd_mean", "hmd_sd",
                "afd_mean", "afd_sd"]


def stats_table(stats: dict[str, CampaignStats]) -> str:
    rows = [STATS_HEADER]
    for name, s in stats.items():
        rows.append([name, str(s.n_runs), _pct(s.ldwc_pct), _pct(s.nmac_pct),
                     _fmt(s.hmd_mean), _fmt(s.hmd_sd), _fmt(s.afd_mean), _fmt(s.afd_sd)])
    return _csv(rows)


def distance_table(records: list[RunRecord]) -> str:
    names = [run_name(r) for r in records]
    dists = [pair_distances(r)[0] for r in records]
    n = max(len(d) for d in dists)
    rows = [["t", *names]]
    for t in range(n):
        rows.append([_fmt(t * records[0].config.sample_time),
                     *(_fmt(d[t]) if t < len(d) else "" for d in dists)])
    return _csv(rows)


def blob_hash(data: bytes) -> str:
    """Content hash in the same form as a git blob id."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_results(
    results: dict[str, list[RunRecord]],
    stats: dict[str, CampaignStats],
    out_dir: str | os.PathLike,
    spec: CampaignSpec | None = None,
) -> Path:
    """Write trajectories, distance tables, the stats table and a manifest.

    Returns the manifest path. Every file is written atomically, so an
    interrupted campaign never leaves a truncated table.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    files: dict[str, str] = {}

    def put(rel: str, text: str):
        data = text.encode()
        atomic_write(out / rel, data)
        files[rel] = blob_hash(data)

    for scenario, records in results.items():
        for rec in records:
            put(f"trajectories/{scenario}/{run_name(rec)}.csv", trajectory_table(rec))
        put(f"distances/{scenario}.csv", distance_table(records))
    put("stats.csv", stats_table(stats))
    manifest = {
        "package": "daampc",
        "version": __version__,
        "backend": get_backend().NAME,
        "spec": spec.to_dict() if spec is not None else None,
        "files": files,
        "stats_hash": files["stats.csv"],
        "content_hash": blob_hash(json.dumps(files, sort_keys=True).encode()),
    }
    path = out / "manifest.json"
    atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def run_spec(spec: CampaignSpec, workers: int = 1
             ) -> tuple[dict[str, list[RunRecord]], dict[str, CampaignStats]]:
    """Run every scenario row of the campaign and aggregate each row.

    Config indices for seeding run over the whole campaign, so no two rows
    share a random stream.
    """
    rows = spec.rows()
    flat = [cfg for _, cfgs in rows for cfg in cfgs]
    records = run_campaign(flat, spec.monte_carlo_runs, spec.seed_root, workers)
    results: dict[str, list[RunRecord]] = {}
    offsets, start = [], 0
    for _, cfgs in rows:
        offsets.append((start, start + len(cfgs)))
        start += len(cfgs)
    for (name, _), (lo, hi) in zip(rows, offsets):
        results[name] = [r for r in records if lo <= r.config.spawn_key[0] < hi]
    stats = {
        name: aggregate([compute_metrics(r, interpolate=spec.interpolate_cpa) for r in recs])
        for name, recs in results.items()
    }
    return results, stats


def spec_from_manifest(path: str | os.PathLike) -> CampaignSpec:
    data = json.loads(Path(path).read_text())
    if not data.get("spec"):
        raise SpecError(f"{path}: manifest carries no campaign spec")
    return parse_spec_text(yaml.safe_dump(data["spec"]), str(path))


def replay(manifest: str | os.PathLike, out_dir: str | os.PathLike, workers: int = 1) -> Path:
    """Re-run the campaign recorded in a manifest into ``out_dir``."""
    spec = dataclasses.replace(spec_from_manifest(manifest), output_dir=str(out_dir))
    results, stats = run_spec(spec, workers)
    return write_results(results, stats, out_dir, spec)
