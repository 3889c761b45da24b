"""DAG data model, topology queries and static rank features.

A :class:`Job` is immutable once built.  Node identifiers are opaque but must
be mutually orderable (ints or strings) because several tie-breaks use
"lowest id".
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Hashable, Iterable, Mapping, Sequence

from .errors import CycleDetected, DanglingEdge, DuplicateNodeId, InvalidJob

NodeId = Hashable
NodeKey = tuple  # (job_id, node_id), unique across a workload


class TaskStatus(enum.IntEnum):
    UNASSIGNED = 0
    ASSIGNED = 1
    RUNNING = 2
    FINISHED = 3


@dataclass(frozen=True)
class TaskNode:
    id: NodeId
    job_id: Hashable
    work: float

    def __post_init__(self):
        if not (self.work > 0 and math.isfinite(self.work)):
            raise InvalidJob(f"node {self.id!r}: computation size must be positive, got {self.work!r}")


@dataclass(frozen=True)
class Edge:
    src: NodeId
    dst: NodeId
    data: float

    def __post_init__(self):
        if self.src == self.dst:
            raise InvalidJob(f"self-loop on node {self.src!r}")
        if not (self.data >= 0 and math.isfinite(self.data)):
            raise InvalidJob(f"edge {self.src!r}->{self.dst!r}: data size must be >= 0, got {self.data!r}")


class Job:
    """A validated DAG of tasks.  Build through :func:`build_job`."""

    def __init__(self, id, nodes: Mapping[NodeId, TaskNode], edges: Mapping[tuple, Edge],
                 arrival_time: float, parents, children, topo_order):
        self.id = id
        self.arrival_time = float(arrival_time)
        self.nodes = nodes
        self.edges = edges
        self.parents = parents
        self.children = children
        self.topo_order = topo_order

    # adjacency views
    def work(self, n) -> float:
        return self.nodes[n].work

    def data(self, src, dst) -> float:
        return self.edges[(src, dst)].data

    def out_edges(self, n) -> tuple[Edge, ...]:
        return tuple(self.edges[(n, c)] for c in self.children[n])

    @cached_property
    def entry_nodes(self) -> tuple:
        return tuple(n for n in self.topo_order if not self.parents[n])

    @cached_property
    def exit_nodes(self) -> tuple:
        return tuple(n for n in self.topo_order if not self.children[n])

    @cached_property
    def total_work(self) -> float:
        return math.fsum(node.work for node in self.nodes.values())

    def __len__(self):
        return len(self.nodes)

    def with_arrival(self, arrival_time: float) -> "Job":
        return Job(self.id, self.nodes, self.edges, arrival_time, self.parents, self.children, self.topo_order)

    def __eq__(self, other):
        if not isinstance(other, Job):
            return NotImplemented
        return (self.id == other.id and self.arrival_time == other.arrival_time
                and self.nodes == other.nodes and self.edges == other.edges)

    def __hash__(self):
        return hash((self.id, len(self.nodes), len(self.edges)))

    def __repr__(self):
        return f"Job(id={self.id!r}, nodes={len(self.nodes)}, edges={len(self.edges)}, arrival={self.arrival_time})"


def build_job(nodes: Iterable, edges: Iterable, arrival_time: float = 0.0, job_id=0) -> Job:
    """Validate nodes/edges and return a :class:`Job`.

    ``nodes`` holds :class:`TaskNode` objects or ``(id, work)`` pairs; ``edges``
    holds :class:`Edge` objects or ``(src, dst, data)`` triples.
    """
    node_map: dict = {}
    for n in nodes:
        if not isinstance(n, TaskNode):
            nid, work = n
            n = TaskNode(nid, job_id, float(work))
        if n.id in node_map:
            raise DuplicateNodeId(f"job {job_id!r}: duplicate node id {n.id!r}")
        node_map[n.id] = n

    edge_map: dict = {}
    for e in edges:
        if not isinstance(e, Edge):
            src, dst, data = e
            e = Edge(src, dst, float(data))
        if e.src not in node_map or e.dst not in node_map:
            raise DanglingEdge(f"job {job_id!r}: edge {e.src!r}->{e.dst!r} references an unknown node")
        if (e.src, e.dst) in edge_map:
            raise InvalidJob(f"job {job_id!r}: duplicate edge {e.src!r}->{e.dst!r}")
        edge_map[(e.src, e.dst)] = e

    if not math.isfinite(arrival_time) or arrival_time < 0:
        raise InvalidJob(f"job {job_id!r}: arrival_time must be finite and >= 0")

    ids = sorted(node_map)
    parents = {n: [] for n in ids}
    children = {n: [] for n in ids}
    for src, dst in edge_map:
        children[src].append(dst)
        parents[dst].append(src)
    parents = {n: tuple(sorted(p)) for n, p in parents.items()}
    children = {n: tuple(sorted(c)) for n, c in children.items()}

    # Kahn's algorithm, smallest id first for a deterministic order
    indeg = {n: len(parents[n]) for n in ids}
    heap = [n for n in ids if indeg[n] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    if len(order) != len(ids):
        stuck = sorted(n for n in ids if indeg[n] > 0)
        raise CycleDetected(f"job {job_id!r}: cycle among nodes {stuck[:8]}")

    return Job(job_id, {n: node_map[n] for n in ids}, edge_map, arrival_time,
               parents, children, tuple(order))


# ---------------------------------------------------------------------------
# rank features

@dataclass(frozen=True)
class RankTable:
    rank_up: Mapping
    rank_down: Mapping


def _comm(data: float, mean_bandwidth: float) -> float:
    return 0.0 if math.isinf(mean_bandwidth) else data / mean_bandwidth


def compute_rank_up(job: Job, mean_speed: float, mean_bandwidth: float) -> dict:
    """Longest average-cost path from each node to an exit node (node included)."""
    if mean_speed <= 0 or mean_bandwidth <= 0:
        raise ValueError("mean speed and bandwidth must be positive")
    rank: dict = {}
    for n in reversed(job.topo_order):
        tail = max((_comm(job.edges[(n, c)].data, mean_bandwidth) + rank[c] for c in job.children[n]),
                   default=0.0)
        rank[n] = job.nodes[n].work / mean_speed + tail
    return rank


def compute_rank_down(job: Job, mean_speed: float, mean_bandwidth: float) -> dict:
    """Longest average-cost path from an entry node up to (excluding) each node."""
    if mean_speed <= 0 or mean_bandwidth <= 0:
        raise ValueError("mean speed and bandwidth must be positive")
    rank: dict = {}
    for n in job.topo_order:
        rank[n] = max((rank[p] + job.nodes[p].work / mean_speed + _comm(job.edges[(p, n)].data, mean_bandwidth)
                       for p in job.parents[n]), default=0.0)
    return rank


def compute_ranks(job: Job, mean_speed: float, mean_bandwidth: float) -> RankTable:
    return RankTable(compute_rank_up(job, mean_speed, mean_bandwidth),
                     compute_rank_down(job, mean_speed, mean_bandwidth))


def critical_path(job: Job) -> tuple[list, float]:
    """Path maximising summed work, ignoring communication.

    Ties go to the lexicographically smallest node-id sequence.  Returns the
    path and its summed work.
    """
    best: dict = {}
    for n in reversed(job.topo_order):
        w = job.nodes[n].work
        tail_sum, tail_path = 0.0, None
        for c in job.children[n]:
            s, p = best[c]
            if tail_path is None or s > tail_sum or (s == tail_sum and p < tail_path):
                tail_sum, tail_path = s, p
        best[n] = (w + tail_sum, [n] + (tail_path or []))
    top_sum, top_path = -1.0, None
    for n in job.entry_nodes:
        s, p = best[n]
        if top_path is None or s > top_sum or (s == top_sum and p < top_path):
            top_sum, top_path = s, p
    return top_path, top_sum


def critical_path_lower_bound(job: Job, fastest_speed: float) -> float:
    """Time to run the critical path on the fastest executor without communication."""
    path, _ = critical_path(job)
    return math.fsum(job.nodes[n].work for n in path) / fastest_speed


def node_keys(jobs: Sequence[Job]) -> list:
    return [(j.id, n) for j in jobs for n in j.topo_order]
