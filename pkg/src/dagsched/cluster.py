"""Heterogeneous executor fleet, communication model and occupancy timelines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, NamedTuple, Sequence

import numpy as np

from .errors import OverlapRejected, UnknownExecutor

# Intel CPU frequencies (GHz) spanning 2.1-3.6.
DEFAULT_SPEED_TABLE = (2.1, 2.3, 2.5, 2.7, 2.9, 3.1, 3.3, 3.6)


@dataclass(frozen=True)
class Executor:
    id: int
    speed: float

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError(f"executor {self.id}: speed must be positive")


class CommMatrix:
    """Pairwise bandwidths.  The diagonal is infinite (co-located transfers are free)."""

    def __init__(self, bandwidth):
        bw = np.array(bandwidth, dtype=float)
        if bw.ndim != 2 or bw.shape[0] != bw.shape[1]:
            raise ValueError("bandwidth must be a square matrix")
        n = bw.shape[0]
        off = ~np.eye(n, dtype=bool)
        if np.any(bw[off] <= 0):
            raise ValueError("off-diagonal bandwidths must be positive")
        np.fill_diagonal(bw, np.inf)
        self.bandwidth = bw
        # seconds per data unit; zero on the diagonal
        self.inv_bandwidth = np.where(off, 1.0 / bw, 0.0)
        self.inv_bandwidth.flags.writeable = False
        self.bandwidth.flags.writeable = False

    @classmethod
    def uniform(cls, n: int, bandwidth: float) -> "CommMatrix":
        return cls(np.full((n, n), float(bandwidth)))

    @property
    def size(self) -> int:
        return self.bandwidth.shape[0]

    @property
    def mean_bandwidth(self) -> float:
        n = self.size
        if n == 1:
            return math.inf
        return float(self.bandwidth[~np.eye(n, dtype=bool)].mean())

    def __eq__(self, other):
        return isinstance(other, CommMatrix) and np.array_equal(self.bandwidth, other.bandwidth)


def transfer_time(comm: CommMatrix, src_exec: int, dst_exec: int, data_size: float) -> float:
    n = comm.size
    if not (0 <= src_exec < n and 0 <= dst_exec < n):
        raise UnknownExecutor(f"executor pair ({src_exec}, {dst_exec}) outside 0..{n - 1}")
    if src_exec == dst_exec or data_size == 0:
        return 0.0
    return data_size / comm.bandwidth[src_exec, dst_exec]


class Interval(NamedTuple):
    start: float
    finish: float
    owner: Hashable  # (job_id, node_id, is_duplicate)


class Timeline:
    """Append-only occupancy per executor.

    A new interval must start at or after the executor's last finish, so
    intervals on one executor never overlap and stay sorted by start.
    """

    def __init__(self, n_executors: int):
        self.intervals: list[list[Interval]] = [[] for _ in range(n_executors)]
        self.last_finish = np.zeros(n_executors)

    def _check(self, executor: int):
        if not 0 <= executor < len(self.intervals):
            raise UnknownExecutor(f"executor {executor} outside 0..{len(self.intervals) - 1}")

    def earliest_free_at_or_after(self, executor: int, t: float) -> float:
        self._check(executor)
        return max(t, float(self.last_finish[executor]))

    def reserve(self, executor: int, start: float, finish: float, owner=None) -> None:
        self._check(executor)
        if not finish > start:
            raise OverlapRejected(f"empty or reversed interval [{start}, {finish})")
        if start < self.last_finish[executor]:
            raise OverlapRejected(
                f"executor {executor}: [{start}, {finish}) overlaps busy time ending {self.last_finish[executor]}")
        self.intervals[executor].append(Interval(start, finish, owner))
        self.last_finish[executor] = finish

    @property
    def horizon(self) -> float:
        return float(self.last_finish.max()) if len(self.last_finish) else 0.0

    def copy(self) -> "Timeline":
        t = Timeline(len(self.intervals))
        t.intervals = [list(iv) for iv in self.intervals]
        t.last_finish = self.last_finish.copy()
        return t


@dataclass
class Cluster:
    executors: tuple[Executor, ...]
    comm: CommMatrix
    speed_table: tuple = field(default=DEFAULT_SPEED_TABLE)

    def __post_init__(self):
        if len(self.executors) < 1:
            raise ValueError("a cluster needs at least one executor")
        if self.comm.size != len(self.executors):
            raise ValueError("communication matrix size does not match executor count")
        self.speeds = np.array([e.speed for e in self.executors], dtype=float)
        self.speeds.flags.writeable = False

    def __len__(self):
        return len(self.executors)

    @property
    def mean_speed(self) -> float:
        return float(self.speeds.mean())

    @property
    def max_speed(self) -> float:
        return float(self.speeds.max())

    @property
    def min_speed(self) -> float:
        return float(self.speeds.min())

    @property
    def mean_bandwidth(self) -> float:
        return self.comm.mean_bandwidth

    def __eq__(self, other):
        return (isinstance(other, Cluster) and self.executors == other.executors
                and self.comm == other.comm)


def cluster_from_speeds(speeds: Sequence[float], bandwidth: float = 1.0) -> Cluster:
    execs = tuple(Executor(i, float(s)) for i, s in enumerate(speeds))
    return Cluster(execs, CommMatrix.uniform(len(execs), bandwidth))


def make_cluster(n_executors: int, speed_table: Sequence[float] = DEFAULT_SPEED_TABLE,
                 uniform_bandwidth: float = 1.0, seed: int = 0) -> Cluster:
    """Draw executor speeds uniformly from ``speed_table``; all links share one bandwidth."""
    if n_executors < 1:
        raise ValueError("n_executors must be >= 1")
    rng = np.random.default_rng(seed)
    table = np.asarray(speed_table, dtype=float)
    speeds = table[rng.integers(0, len(table), size=n_executors)]
    c = cluster_from_speeds(speeds.tolist(), uniform_bandwidth)
    c.speed_table = tuple(float(s) for s in table)
    return c
