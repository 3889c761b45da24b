"""Executor allocation: EFT, AFTC, CPEFT and the duplication-aware DEFT.

The scalar functions (``data_ready``, ``est``, ``eft``, ``cpeft``) evaluate a
single candidate and are the readable reference.  ``deft_decide`` scans every
candidate with numpy over executors; tests check the two agree.

Start times always include the executor's own availability and the job's
arrival on top of the data-ready terms, otherwise executor exclusivity would
be violated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .cluster import Cluster, Timeline, transfer_time
from .dag import Job
from .errors import NotAParent, ParentUnplaced, ScheduleViolation

CPEFT_MODES = ("recompute", "literal")


@dataclass(frozen=True)
class Placement:
    job_id: object
    node_id: object
    executor: int
    ast: float
    aft: float
    is_duplicate: bool = False

    @property
    def key(self):
        return (self.job_id, self.node_id)


@dataclass(frozen=True)
class DupPlan:
    parent: object
    ast: float
    aft: float


@dataclass(frozen=True)
class AllocationDecision:
    job_id: object
    node_id: object
    executor: int
    ast: float
    aft: float
    duplicated_parent: Optional[DupPlan] = None
    eft_min: float = math.nan  # best finish time without duplication

    @property
    def key(self):
        return (self.job_id, self.node_id)


class ScheduleRecord:
    """All placements made so far plus the per-executor timelines."""

    def __init__(self, cluster: Cluster):
        self.cluster = cluster
        self.timeline = Timeline(len(cluster))
        self.placements: dict[tuple, list[Placement]] = {}
        self.decisions: list[AllocationDecision] = []

    def placements_of(self, job_id, node_id) -> list[Placement]:
        return self.placements.get((job_id, node_id), [])

    def primary(self, key) -> Placement:
        """The non-duplicate placement of a node."""
        for p in self.placements[key]:
            if not p.is_duplicate:
                return p
        raise KeyError(key)

    def is_placed(self, key) -> bool:
        return key in self.placements

    def add(self, p: Placement) -> None:
        self.timeline.reserve(p.executor, p.ast, p.aft, (p.job_id, p.node_id, p.is_duplicate))
        self.placements.setdefault(p.key, []).append(p)

    def all_placements(self) -> Iterable[Placement]:
        for ps in self.placements.values():
            yield from ps

    @property
    def n_duplicates(self) -> int:
        return sum(p.is_duplicate for p in self.all_placements())


# ---------------------------------------------------------------------------
# scalar reference evaluation

def data_ready(schedule: ScheduleRecord, job: Job, parent, child, dst_exec: int) -> float:
    """Earliest time ``parent``'s output for ``child`` can be on ``dst_exec``."""
    ps = schedule.placements_of(job.id, parent)
    if not ps:
        raise ParentUnplaced(f"job {job.id!r}: parent {parent!r} of {child!r} has no placement")
    e = job.edges[(parent, child)].data
    comm = schedule.cluster.comm
    return min(p.aft + transfer_time(comm, p.executor, dst_exec, e) for p in ps)


def est(schedule: ScheduleRecord, job: Job, node, dst_exec: int) -> float:
    ready = max((data_ready(schedule, job, p, node, dst_exec) for p in job.parents[node]), default=-math.inf)
    free = schedule.timeline.earliest_free_at_or_after(dst_exec, job.arrival_time)
    return max(ready, free)


def eft(schedule: ScheduleRecord, job: Job, node, dst_exec: int) -> float:
    return est(schedule, job, node, dst_exec) + job.nodes[node].work / schedule.cluster.speeds[dst_exec]


def cpeft(schedule: ScheduleRecord, job: Job, parent, node, dst_exec: int,
          mode: str = "recompute") -> tuple[float, DupPlan]:
    """Finish time of ``node`` on ``dst_exec`` when ``parent`` is re-run there first.

    ``recompute`` places the copy of ``parent`` right before ``node`` on
    ``dst_exec``, paying its execution time after its own inputs arrive.
    ``literal`` evaluates the max-of-AFTC formula as written, which carries no
    cost or benefit from the copy and therefore equals plain EFT.
    """
    if parent not in job.parents[node]:
        raise NotAParent(f"{parent!r} is not a parent of {node!r} in job {job.id!r}")
    speed = schedule.cluster.speeds[dst_exec]
    free = schedule.timeline.earliest_free_at_or_after(dst_exec, job.arrival_time)

    dup_start = max([free] + [data_ready(schedule, job, g, parent, dst_exec) for g in job.parents[parent]])
    dup_aft = dup_start + job.nodes[parent].work / speed
    plan = DupPlan(parent, dup_start, dup_aft)

    others = [data_ready(schedule, job, m, node, dst_exec) for m in job.parents[node] if m != parent]
    own = data_ready(schedule, job, parent, node, dst_exec)
    if mode == "literal":
        start = max([own] + others + [free])
    elif mode == "recompute":
        start = max([min(dup_aft, own)] + others + [dup_aft])
    else:
        raise ValueError(f"unknown cpeft mode {mode!r}")
    return start + job.nodes[node].work / speed, plan


# ---------------------------------------------------------------------------
# vectorised decision

def _ready_vector(schedule: ScheduleRecord, job: Job, parent, child) -> np.ndarray:
    ps = schedule.placements.get((job.id, parent))
    if not ps:
        raise ParentUnplaced(f"job {job.id!r}: parent {parent!r} of {child!r} has no placement")
    e = job.edges[(parent, child)].data
    bw = schedule.cluster.comm.bandwidth
    out = None
    for p in ps:
        # e / inf == 0 on the diagonal, matching transfer_time exactly
        v = p.aft + e / bw[p.executor]
        out = v if out is None else np.minimum(out, v)
    return out


def eft_decide(schedule: ScheduleRecord, job: Job, node) -> AllocationDecision:
    """Plain EFT over all executors (no duplication); lowest executor id on ties."""
    speeds = schedule.cluster.speeds
    free = np.maximum(schedule.timeline.last_finish, job.arrival_time)
    start = free
    for p in job.parents[node]:
        start = np.maximum(start, _ready_vector(schedule, job, p, node))
    finish = start + job.nodes[node].work / speeds
    k = int(np.argmin(finish))
    return AllocationDecision(job.id, node, k, float(start[k]), float(finish[k]), None, float(finish[k]))


def deft_decide(schedule: ScheduleRecord, job: Job, node, mode: str = "recompute") -> AllocationDecision:
    """Best of EFT and every single-parent CPEFT candidate, without committing.

    Tie-break among equal finish times: lowest executor id, then no
    duplication, then lowest parent id.
    """
    if mode not in CPEFT_MODES:
        raise ValueError(f"unknown cpeft mode {mode!r}")
    speeds = schedule.cluster.speeds
    work = job.nodes[node].work
    free = np.maximum(schedule.timeline.last_finish, job.arrival_time)
    parents = job.parents[node]
    ready = {p: _ready_vector(schedule, job, p, node) for p in parents}

    start = free
    for r in ready.values():
        start = np.maximum(start, r)
    finish = start + work / speeds
    eft_min = float(finish.min())
    best = eft_min

    dup_finish = {}
    for p in parents:
        dup_start = free
        for g in job.parents[p]:
            dup_start = np.maximum(dup_start, _ready_vector(schedule, job, g, p))
        dup_aft = dup_start + job.nodes[p].work / speeds
        others = None
        for m in parents:
            if m != p:
                others = ready[m] if others is None else np.maximum(others, ready[m])
        if mode == "literal":
            s = np.maximum(free, ready[p])
        else:
            s = np.maximum(np.minimum(dup_aft, ready[p]), dup_aft)
        if others is not None:
            s = np.maximum(s, others)
        f = s + work / speeds
        # re-running a parent where it already ran buys nothing
        for pl in schedule.placements[(job.id, p)]:
            f[pl.executor] = np.inf
        dup_finish[p] = (s, f, dup_start, dup_aft)
        best = min(best, float(f.min()))

    cands = [(float(finish[k]), k, 0, 0, None) for k in np.flatnonzero(finish == best)]
    for rank, p in enumerate(parents):  # parents are sorted by id
        s, f, ds, da = dup_finish[p]
        for k in np.flatnonzero(f == best):
            cands.append((float(f[k]), int(k), 1, rank, p))
    aft, k, is_dup, _, p = min(cands, key=lambda c: c[:4])
    k = int(k)
    if not is_dup:
        return AllocationDecision(job.id, node, k, float(start[k]), aft, None, eft_min)
    s, f, ds, da = dup_finish[p]
    return AllocationDecision(job.id, node, k, float(s[k]), aft,
                              DupPlan(p, float(ds[k]), float(da[k])), eft_min)


def commit(schedule: ScheduleRecord, decision: AllocationDecision) -> None:
    """Reserve the decision's intervals (duplicate first) and record placements."""
    d = decision
    if d.duplicated_parent is not None:
        dp = d.duplicated_parent
        if dp.aft > d.ast:
            raise ScheduleViolation(f"duplicate of {dp.parent!r} ends after {d.node_id!r} starts")
        schedule.add(Placement(d.job_id, dp.parent, d.executor, dp.ast, dp.aft, True))
    schedule.add(Placement(d.job_id, d.node_id, d.executor, d.ast, d.aft, False))
    schedule.decisions.append(d)


def deft(schedule: ScheduleRecord, job: Job, node, mode: str = "recompute") -> AllocationDecision:
    d = deft_decide(schedule, job, node, mode)
    commit(schedule, d)
    return d


def allocate(schedule: ScheduleRecord, job: Job, node, allocator: str = "deft",
             mode: str = "recompute") -> AllocationDecision:
    if allocator == "deft":
        d = deft_decide(schedule, job, node, mode)
    elif allocator == "eft":
        d = eft_decide(schedule, job, node)
    else:
        raise ValueError(f"unknown allocator {allocator!r}")
    commit(schedule, d)
    return d


def validate_schedule(schedule: ScheduleRecord, jobs: Iterable[Job], complete: bool = True,
                      atol: float = 0.0) -> None:
    """Raise :class:`ScheduleViolation` on overlap, precedence or arrival breaches."""
    jobs = list(jobs)
    speeds = schedule.cluster.speeds
    comm = schedule.cluster.comm
    for k, ivs in enumerate(schedule.timeline.intervals):
        for a, b in zip(ivs, ivs[1:]):
            if b.start < a.finish:
                raise ScheduleViolation(f"executor {k}: {a.owner} overlaps {b.owner}")
    for job in jobs:
        for n in job.topo_order:
            ps = schedule.placements.get((job.id, n))
            if not ps:
                if complete:
                    raise ScheduleViolation(f"job {job.id!r} node {n!r} never placed")
                continue
            if sum(not p.is_duplicate for p in ps) != 1:
                raise ScheduleViolation(f"job {job.id!r} node {n!r} needs exactly one primary placement")
            for p in ps:
                if p.ast < job.arrival_time - atol:
                    raise ScheduleViolation(f"{p} starts before its job arrives")
                if abs(p.aft - (p.ast + job.nodes[n].work / speeds[p.executor])) > atol * max(1.0, p.aft):
                    raise ScheduleViolation(f"{p} duration disagrees with work/speed")
                for par in job.parents[n]:
                    pps = schedule.placements.get((job.id, par))
                    if not pps:
                        raise ScheduleViolation(f"{p} placed before parent {par!r}")
                    e = job.edges[(par, n)].data
                    ready = min(q.aft + transfer_time(comm, q.executor, p.executor, e) for q in pps)
                    if ready > p.ast + atol * max(1.0, p.ast):
                        raise ScheduleViolation(f"{p} starts before parent {par!r} data is ready ({ready})")
