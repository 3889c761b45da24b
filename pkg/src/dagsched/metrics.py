"""Makespan, speedup, SLR and decision-latency statistics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .allocator import ScheduleRecord
from .cluster import Cluster
from .dag import Job, critical_path_lower_bound
from .errors import EmptySamples, IncompleteSchedule


def _check_complete(schedule: ScheduleRecord, workload: Sequence[Job] | None) -> None:
    if workload is None:
        return
    for job in workload:
        for n in job.nodes:
            if not schedule.is_placed((job.id, n)):
                raise IncompleteSchedule(f"task {(job.id, n)!r} has no placement")


def makespan(schedule: ScheduleRecord, workload: Sequence[Job] | None = None) -> float:
    """Latest finish over original (non-duplicate) placements."""
    _check_complete(schedule, workload)
    afts = [p.aft for p in schedule.all_placements() if not p.is_duplicate]
    if not afts:
        raise IncompleteSchedule("schedule has no placements")
    return max(afts)


def speedup(schedule: ScheduleRecord, workload: Sequence[Job], cluster: Cluster) -> float:
    """All work run back to back on the fastest executor, divided by the makespan."""
    seq = math.fsum(j.total_work for j in workload) / cluster.max_speed
    return seq / makespan(schedule, workload)


def job_completion(schedule: ScheduleRecord, job: Job) -> float:
    return max(schedule.primary((job.id, n)).aft for n in job.nodes)


def slr(schedule: ScheduleRecord, workload: Sequence[Job], cluster: Cluster) -> float:
    """Mean over jobs of (completion - arrival) / critical-path lower bound.

    For a single job arriving at 0 this is makespan / lower bound.
    """
    _check_complete(schedule, workload)
    ratios = [(job_completion(schedule, j) - j.arrival_time) / critical_path_lower_bound(j, cluster.max_speed)
              for j in workload]
    return math.fsum(ratios) / len(ratios)


def nearest_rank(sorted_samples: Sequence[float], q: float) -> float:
    n = len(sorted_samples)
    return sorted_samples[min(n, max(1, math.ceil(q / 100.0 * n))) - 1]


@dataclass(frozen=True)
class LatencyStats:
    p50: float
    p98: float
    max: float


def latency_stats(samples: Sequence[float]) -> LatencyStats:
    if len(samples) == 0:
        raise EmptySamples("no latency samples")
    s = sorted(samples)
    return LatencyStats(nearest_rank(s, 50), nearest_rank(s, 98), s[-1])


@dataclass(frozen=True)
class MetricsReport:
    policy: str
    seed: int
    n_jobs: int
    makespan: float
    speedup: float
    slr: float
    n_duplicates: int
    latency_p50_ms: float
    latency_p98_ms: float
    latency_max_ms: float

    DETERMINISTIC = ("policy", "seed", "n_jobs", "makespan", "speedup", "slr", "n_duplicates")
    TIMING = ("policy", "seed", "n_jobs", "latency_p50_ms", "latency_p98_ms", "latency_max_ms")


def report(policy: str, seed: int, workload: Sequence[Job], cluster: Cluster, schedule: ScheduleRecord,
           latencies: Sequence[float]) -> MetricsReport:
    lat = latency_stats(latencies)
    return MetricsReport(policy, seed, len(workload), makespan(schedule, workload),
                         speedup(schedule, workload, cluster), slr(schedule, workload, cluster),
                         schedule.n_duplicates, lat.p50 * 1e3, lat.p98 * 1e3, lat.max * 1e3)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def reports_to_csv(reports: Sequence[MetricsReport], columns: Sequence[str] = MetricsReport.DETERMINISTIC) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in reports:
        d = asdict(r)
        w.writerow([_fmt(d[c]) for c in columns])
    return buf.getvalue()


def aggregate(reports: Sequence[MetricsReport]) -> list[dict]:
    """Mean and (population) std of makespan/speedup/slr per (policy, n_jobs), sorted."""
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.policy, r.n_jobs), []).append(r)
    out = []
    for (policy, n_jobs), rs in sorted(groups.items()):
        row = {"policy": policy, "n_jobs": n_jobs, "runs": len(rs)}
        for m in ("makespan", "speedup", "slr"):
            vals = [getattr(r, m) for r in rs]
            mean = math.fsum(vals) / len(vals)
            row[f"{m}_mean"] = mean
            row[f"{m}_std"] = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / len(vals))
        out.append(row)
    return out


def aggregate_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    cols = list(rows[0])
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in cols])
    return buf.getvalue()


def summary_text(rows: Sequence[dict]) -> str:
    lines = [f"{'policy':<10} {'jobs':>5} {'runs':>5} {'makespan':>12} {'speedup':>9} {'slr':>8}"]
    for r in rows:
        lines.append(f"{r['policy']:<10} {r['n_jobs']:>5} {r['runs']:>5} {r['makespan_mean']:>12.3f} "
                     f"{r['speedup_mean']:>9.3f} {r['slr_mean']:>8.3f}")
    return "\n".join(lines) + "\n"


def reports_to_json(reports: Sequence[MetricsReport]) -> str:
    return json.dumps([asdict(r) for r in reports], indent=2, sort_keys=True) + "\n"
