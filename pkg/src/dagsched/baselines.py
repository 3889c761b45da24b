"""First-phase node-selection baselines and the static HEFT list scheduler.

Each ``*_select`` takes the (sorted) frontier and the simulator state and
returns one frontier key.  All are deterministic.
"""

from __future__ import annotations

from typing import Sequence

from .allocator import ScheduleRecord, allocate
from .cluster import Cluster
from .dag import Job, compute_rank_up
from .errors import ContinuousModeUnsupported, EmptyFrontier
from .simulator import Policy, SimState


def _nonempty(frontier):
    if not frontier:
        raise EmptyFrontier("frontier is empty")


def fifo_select(frontier: Sequence, state: SimState):
    """Earliest-arrived job first (submission order on equal arrival), then lowest rank_down."""
    _nonempty(frontier)

    def key(k):
        job = state.jobs[k[0]]
        return (job.arrival_time, state.job_order[k[0]], state.ranks[k[0]].rank_down[k[1]], k)
    return min(frontier, key=key)


def sjf_select(frontier: Sequence, state: SimState):
    """Job with the least remaining average work; inside it, highest rank_up."""
    _nonempty(frontier)
    return min(frontier, key=lambda k: (state.left_work(k[0]), k[0], -state.ranks[k[0]].rank_up[k[1]], k))


def hrrn_ratio(key, state: SimState) -> float:
    job = state.jobs[key[0]]
    t_wait = state.now - max(job.arrival_time, state.frontier_entered(key))
    t_exec = job.nodes[key[1]].work / state.mean_speed
    return t_wait / (t_wait + t_exec)


def hrrn_select(frontier: Sequence, state: SimState):
    """Maximise t_wait / (t_wait + t_exec); lowest key on ties."""
    _nonempty(frontier)
    return min(frontier, key=lambda k: (-hrrn_ratio(k, state), k))


def high_rank_up_select(frontier: Sequence, state: SimState):
    _nonempty(frontier)
    return min(frontier, key=lambda k: (-state.ranks[k[0]].rank_up[k[1]], k))


class _SelectPolicy(Policy):
    _fn = None

    def select(self, state):
        return type(self)._fn(state.frontier(), state)


class FIFOPolicy(_SelectPolicy):
    name = "fifo"
    _fn = staticmethod(fifo_select)


class SJFPolicy(_SelectPolicy):
    name = "sjf"
    _fn = staticmethod(sjf_select)


class HRRNPolicy(_SelectPolicy):
    name = "hrrn"
    _fn = staticmethod(hrrn_select)


class HighRankUpPolicy(_SelectPolicy):
    name = "rankup"
    _fn = staticmethod(high_rank_up_select)


class HEFTPolicy(HighRankUpPolicy):
    """HEFT inside the simulator: descending rank_up order with plain EFT.

    With frontier="assigned" the pick sequence is identical to the static
    list built by :func:`heft_schedule`, because rank_up strictly decreases
    along every edge.
    """

    name = "heft"
    allocator = "eft"
    batch_only = True


BASELINES = {
    "fifo": FIFOPolicy,
    "sjf": SJFPolicy,
    "hrrn": HRRNPolicy,
    "rankup": HighRankUpPolicy,
    "heft": HEFTPolicy,
}


def heft_order(workload: Sequence[Job], cluster: Cluster) -> list:
    items = []
    for job in workload:
        ru = compute_rank_up(job, cluster.mean_speed, cluster.mean_bandwidth)
        items.extend((-ru[n], (job.id, n)) for n in job.nodes)
    items.sort()
    return [k for _, k in items]


def heft_schedule(workload: Sequence[Job], cluster: Cluster) -> ScheduleRecord:
    """Static HEFT: global descending-rank_up list, each task placed by EFT (append-only)."""
    if any(j.arrival_time != 0 for j in workload):
        raise ContinuousModeUnsupported("HEFT needs every job present at t=0")
    jobs = {j.id: j for j in workload}
    schedule = ScheduleRecord(cluster)
    for job_id, n in heft_order(workload, cluster):
        allocate(schedule, jobs[job_id], n, allocator="eft")
    return schedule
