"""Discrete-event engine: job arrivals, task completions and the scheduling loop.

On every event instant the engine drains all events with that timestamp,
then repeatedly asks the policy for a frontier node and allocates it until the
frontier is empty.  Assignments are irrevocable.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from .allocator import AllocationDecision, ScheduleRecord, commit, deft_decide, eft_decide, validate_schedule
from .cluster import Cluster
from .dag import Job, RankTable, TaskStatus, compute_ranks
from .errors import ContinuousModeUnsupported, InvalidSpec, PolicyReturnedNonFrontierNode

MODES = ("batch", "continuous")
FRONTIER_MODES = ("assigned", "finished")
ALLOCATORS = ("deft", "eft")

ARRIVAL, COMPLETION = 0, 1


@dataclass
class SimConfig:
    mode: str = "batch"
    allocator: str = "deft"
    cpeft_mode: str = "recompute"
    frontier: str = "assigned"
    seed: int = 0
    max_decisions: Optional[int] = None
    validate: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidSpec(f"mode must be one of {MODES}")
        if self.frontier not in FRONTIER_MODES:
            raise InvalidSpec(f"frontier must be one of {FRONTIER_MODES}")
        if self.allocator not in ALLOCATORS:
            raise InvalidSpec(f"allocator must be one of {ALLOCATORS}")
        if self.cpeft_mode not in ("recompute", "literal"):
            raise InvalidSpec("cpeft_mode must be 'recompute' or 'literal'")


@dataclass(order=True)
class SimEvent:
    time: float
    kind: int
    sort_id: Any
    payload: Any = field(compare=False, default=None)


@dataclass
class Step:
    node: tuple
    reward: float
    t: float
    now: float
    obs: Any = None
    action: Optional[int] = None
    log_prob: Optional[float] = None
    cache: Any = None


@dataclass
class EpisodeTrace:
    t0: float
    steps: list[Step] = field(default_factory=list)
    truncated: bool = False
    final_obs: Any = None

    def __len__(self):
        return len(self.steps)

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    @property
    def t_final(self) -> float:
        return self.steps[-1].t if self.steps else self.t0

    @property
    def total_return(self) -> float:
        return math.fsum(self.rewards)


@dataclass
class MetricsRaw:
    makespan: float
    final_clock: float
    latencies: list[float]
    n_decisions: int
    n_duplicates: int
    truncated: bool


@dataclass
class SimResult:
    schedule: ScheduleRecord
    metrics: MetricsRaw
    trace: EpisodeTrace
    jobs: list[Job]


CLOCK_BITS = 24


def decision_clock(t: float) -> float:
    """Round a time onto the 2**-24 s grid used for rewards.

    Differences of grid values below 2**29 s are exact doubles, so the
    rewards of an episode sum to exactly minus the elapsed decision clock.
    """
    return math.ldexp(round(math.ldexp(t, CLOCK_BITS)), -CLOCK_BITS)


def step_reward(t_k: float, t_prev: float) -> float:
    if t_k < t_prev:
        raise ValueError(f"decision clock went backwards: {t_prev} -> {t_k}")
    return -(t_k - t_prev)


class SimState:
    """Read-mostly view of the system handed to policies."""

    def __init__(self, cluster: Cluster, config: SimConfig, jobs: Sequence[Job]):
        self.cluster = cluster
        self.config = config
        self.now = 0.0
        self.mean_speed = cluster.mean_speed
        self.mean_bandwidth = cluster.mean_bandwidth
        self.schedule = ScheduleRecord(cluster)
        self.job_order = {j.id: i for i, j in enumerate(jobs)}
        self.jobs: dict = {}               # arrived jobs, arrival order
        self.ranks: dict[Any, RankTable] = {}
        self.unassigned: dict = {}         # job_id -> set of node ids
        self.finished: set = set()
        self._frontier: dict = {}          # key -> time entered frontier
        self._frontier_sorted: Optional[list] = None
        self._waiting: dict = {}           # key -> parents still blocking
        self._left_work: dict = {}

    # -- queries used by policies --------------------------------------
    def frontier(self) -> list:
        if self._frontier_sorted is None:
            self._frontier_sorted = sorted(self._frontier)
        return self._frontier_sorted

    def frontier_entered(self, key) -> float:
        return self._frontier[key]

    def in_frontier(self, key) -> bool:
        return key in self._frontier

    def job(self, job_id) -> Job:
        return self.jobs[job_id]

    def left_tasks(self, job_id) -> int:
        return len(self.unassigned[job_id])

    def left_work(self, job_id) -> float:
        """Sum of w / mean speed over the job's unassigned tasks."""
        v = self._left_work.get(job_id)
        if v is None:
            job = self.jobs[job_id]
            v = math.fsum(job.nodes[n].work for n in self.unassigned[job_id]) / self.mean_speed
            self._left_work[job_id] = v
        return v

    def active_jobs(self) -> list:
        return [j for j in self.jobs if self.unassigned[j]]

    def status(self, key) -> TaskStatus:
        if key not in self.schedule.placements:
            return TaskStatus.UNASSIGNED
        if key in self.finished:
            return TaskStatus.FINISHED
        p = self.schedule.primary(key)
        return TaskStatus.RUNNING if p.ast <= self.now else TaskStatus.ASSIGNED

    # -- mutation, engine only -----------------------------------------
    def _add_frontier(self, key):
        self._frontier[key] = self.now
        self._frontier_sorted = None

    def _arrive(self, job: Job):
        self.jobs[job.id] = job
        self.ranks[job.id] = compute_ranks(job, self.mean_speed, self.mean_bandwidth)
        self.unassigned[job.id] = set(job.nodes)
        for n in job.topo_order:
            self._waiting[(job.id, n)] = len(job.parents[n])
            if not job.parents[n]:
                self._add_frontier((job.id, n))

    def _release_children(self, key):
        job_id, n = key
        for c in self.jobs[job_id].children[n]:
            ck = (job_id, c)
            self._waiting[ck] -= 1
            if self._waiting[ck] == 0:
                self._add_frontier(ck)

    def _assigned(self, key):
        del self._frontier[key]
        self._frontier_sorted = None
        self.unassigned[key[0]].discard(key[1])
        self._left_work.pop(key[0], None)
        if self.config.frontier == "assigned":
            self._release_children(key)

    def _completed(self, key):
        self.finished.add(key)
        if self.config.frontier == "finished":
            self._release_children(key)


class Policy:
    """Node-selection policy.  Subclasses implement :meth:`select`."""

    name = "policy"
    allocator: Optional[str] = None  # overrides SimConfig.allocator when set
    batch_only = False

    def reset(self, state: SimState) -> None:
        pass

    def select(self, state: SimState):
        raise NotImplementedError

    def select_traced(self, state: SimState):
        """Return ``(node_key, info)``; ``info`` carries obs/action/log_prob for training."""
        return self.select(state), None


def run(workload: Sequence[Job], cluster: Cluster, policy: Policy, config: Optional[SimConfig] = None,
        observer: Optional[Callable[[SimState, Job, Any, AllocationDecision], None]] = None) -> SimResult:
    """Simulate ``workload`` on ``cluster`` under ``policy``.

    ``observer`` is called with each allocation decision before it is
    committed.  The decision clock for rewards is the later of the triggering
    event's time and the committed schedule horizon (on the grid of
    :func:`decision_clock`), so in batch mode the episode return is minus the
    makespan up to 2**-25 s.
    """
    config = config or SimConfig()
    jobs = list(workload)
    if not jobs:
        raise InvalidSpec("workload is empty")
    if len({j.id for j in jobs}) != len(jobs):
        raise InvalidSpec("job ids must be unique within a workload")
    if config.mode == "batch":
        jobs = [j if j.arrival_time == 0 else j.with_arrival(0.0) for j in jobs]
    elif policy.batch_only:
        raise ContinuousModeUnsupported(f"{policy.name} only supports batch mode")
    allocator = policy.allocator or config.allocator

    state = SimState(cluster, config, jobs)
    events: list[SimEvent] = []
    for i, j in enumerate(jobs):
        heapq.heappush(events, SimEvent(j.arrival_time, ARRIVAL, i, j))
    policy.reset(state)

    trace = EpisodeTrace(t0=decision_clock(events[0].time))
    t_prev = trace.t0
    latencies: list[float] = []
    n_decisions = 0
    final_clock = trace.t0
    schedule = state.schedule

    while events:
        t = events[0].time
        state.now = t
        while events and events[0].time == t:
            ev = heapq.heappop(events)
            if ev.kind == ARRIVAL:
                state._arrive(ev.payload)
            else:
                state._completed(ev.payload)
                final_clock = t
        while state._frontier:
            if config.max_decisions is not None and n_decisions >= config.max_decisions:
                trace.truncated = True
                break
            tic = time.perf_counter()
            key, info = policy.select_traced(state)
            if key not in state._frontier:
                raise PolicyReturnedNonFrontierNode(f"{policy.name} returned {key!r}, not in the frontier")
            job = state.jobs[key[0]]
            if allocator == "deft":
                decision = deft_decide(schedule, job, key[1], config.cpeft_mode)
            else:
                decision = eft_decide(schedule, job, key[1])
            if observer is not None:
                observer(state, job, key[1], decision)
            commit(schedule, decision)
            latencies.append(time.perf_counter() - tic)
            n_decisions += 1

            state._assigned(key)
            heapq.heappush(events, SimEvent(decision.aft, COMPLETION, key, key))
            t_k = decision_clock(max(state.now, schedule.timeline.horizon))
            step = Step(node=key, reward=step_reward(t_k, t_prev), t=t_k, now=state.now)
            if info is not None:
                step.obs, step.action, step.log_prob = info.obs, info.action, info.log_prob
                step.cache = getattr(info, "cache", None)
            trace.steps.append(step)
            t_prev = t_k
        if trace.truncated:
            if hasattr(policy, "observe"):
                trace.final_obs = policy.observe(state)
            break

    if config.validate:
        validate_schedule(schedule, jobs, complete=not trace.truncated)
    primaries = [p.aft for p in schedule.all_placements() if not p.is_duplicate]
    makespan = max(primaries) if primaries else 0.0
    metrics = MetricsRaw(makespan=makespan, final_clock=final_clock, latencies=latencies,
                         n_decisions=n_decisions, n_duplicates=schedule.n_duplicates,
                         truncated=trace.truncated)
    return SimResult(schedule, metrics, trace, jobs)
