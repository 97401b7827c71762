"""Run scenarios (sweep x policy x replication) and serialize the results."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .model import ConfigError, InvariantError, Policy
from .scenario import Scenario

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "scenario",
    "policy",
    "sweep_param",
    "sweep_value",
    "group_id",
    "mean_latency_us",
    "p99_us",
    "count",
    "mode_rr_fraction",
    "seed_count",
]


@dataclass
class RunResult:
    sweep_value: object
    policy: str
    replication: int
    seed: int
    summary: Optional[dict] = None  # SimReport.summary() plus group -> subcarriers map
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class ResultSet:
    scenario: str
    sweep_param: Optional[str]
    runs: list[RunResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.runs)

    def rows(self) -> list[dict]:
        return aggregate(self)


def _one_run(args) -> RunResult:
    from .engine import run

    scen, value, policy, rep = args
    cfg = scen.config(value, seed_offset=rep, policy=policy)
    res = RunResult(value, policy.value, rep, cfg.rng_seed)
    try:
        report = run(cfg)
    except (InvariantError, ConfigError) as e:
        res.error = f"{type(e).__name__}: {e}"
        return res
    s = report.summary()
    s["groups"] = {}
    for sc in cfg.subcarriers:
        s["groups"].setdefault(str(sc.group_id), []).append(str(sc.subcarrier_id))
    s["cycles"] = {str(k): int(t.modes.size) for k, t in report.timelines.items()}
    res.summary = s
    return res


def run_scenario(scen: Scenario, *, sweep: bool = True, jobs: int = 1, policies=None, replications=None) -> ResultSet:
    """Execute every (sweep value, policy, replication) run.

    Replication ``r`` uses seed ``rng_seed + r``. A failing run is recorded
    with its error; the others still complete.
    """
    pols = tuple(Policy(p) for p in (policies or scen.policies))
    reps = replications or scen.replications
    points = scen.points() if sweep else [None]
    tasks = [(scen, v, p, r) for v in points for p in pols for r in range(reps)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_one_run, tasks))
    else:
        results = [_one_run(t) for t in tasks]
    for r in results:
        if not r.ok:
            log.error("run %s/%s/rep %d failed: %s", r.sweep_value, r.policy, r.replication, r.error)
    return ResultSet(scen.name, scen.sweep_param if sweep else None, results)


def _mean(xs):
    xs = [x for x in xs if not math.isnan(x)]
    return statistics.fmean(xs) if xs else float("nan")


def _std(xs):
    xs = [x for x in xs if not math.isnan(x)]
    return statistics.stdev(xs) if len(xs) > 1 else 0.0


def _sort_key(v):
    return (0, v) if isinstance(v, (int, float)) else (1, str(v))


def aggregate(rs: ResultSet, with_detail: bool = False) -> list[dict]:
    """One row per (sweep value, policy, group); group ``all`` covers every packet."""
    buckets: dict[tuple, list[RunResult]] = {}
    for r in rs.runs:
        buckets.setdefault((r.sweep_value, r.policy), []).append(r)
    rows = []
    for (value, policy), runs in sorted(buckets.items(), key=lambda kv: (_sort_key(kv[0][0]), kv[0][1])):
        good = sorted((r for r in runs if r.ok), key=lambda r: r.replication)
        groups = sorted({g for r in good for g in r.summary["groups"]}, key=int)
        for gid in ["all"] + groups:
            means, p99s, rr, counts = [], [], [], 0
            for r in good:
                lat = r.summary["latency"] if gid == "all" else r.summary["latency"]["by_group"].get(gid)
                if lat is None:
                    continue
                means.append(lat["mean_us"])
                p99s.append(lat["p99_us"])
                counts += lat["count"]
                subs = (
                    list(r.summary["mode_rr_fraction"]) if gid == "all" else r.summary["groups"].get(gid, [])
                )
                cyc = [r.summary["cycles"][s] for s in subs]
                frac = [r.summary["mode_rr_fraction"][s] for s in subs]
                rr.append(sum(f * c for f, c in zip(frac, cyc)) / sum(cyc) if sum(cyc) else float("nan"))
            row = {
                "scenario": rs.scenario,
                "policy": policy,
                "sweep_param": rs.sweep_param or "",
                "sweep_value": "" if value is None else value,
                "group_id": gid,
                "mean_latency_us": _mean(means),
                "p99_us": _mean(p99s),
                "count": counts,
                "mode_rr_fraction": _mean(rr),
                "seed_count": len(good),
            }
            if with_detail:
                row["mean_latency_std_us"] = _std(means)
                row["p99_std_us"] = _std(p99s)
            rows.append(row)
    return rows


def to_csv(rs: ResultSet) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in aggregate(rs):
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def to_json(rs: ResultSet) -> str:
    doc = {
        "scenario": rs.scenario,
        "sweep_param": rs.sweep_param,
        "columns": CSV_COLUMNS,
        "aggregates": aggregate(rs, with_detail=True),
        "runs": [
            {
                "sweep_value": r.sweep_value,
                "policy": r.policy,
                "replication": r.replication,
                "seed": r.seed,
                "error": r.error,
                "summary": r.summary,
            }
            for r in rs.runs
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=True)


def export(rs: ResultSet, fmt: str, path) -> None:
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    text = to_csv(rs) if fmt == "csv" else to_json(rs)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def load_results(path) -> ResultSet:
    """Inverse of the JSON export."""
    with open(path) as fh:
        doc = json.load(fh)
    runs = [
        RunResult(d["sweep_value"], d["policy"], d["replication"], d["seed"], d["summary"], d["error"])
        for d in doc["runs"]
    ]
    return ResultSet(doc["scenario"], doc["sweep_param"], runs)
