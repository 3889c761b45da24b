import math

import numpy as np
import pytest
from hypothesis import given, settings

from dagsched.dag import (Edge, TaskNode, build_job, compute_rank_down, compute_rank_up, compute_ranks,
                          critical_path, critical_path_lower_bound, node_keys)
from dagsched.errors import CycleDetected, DanglingEdge, DuplicateNodeId, InvalidJob

from conftest import dags, random_job


def chain():
    return build_job([(1, 4.0), (2, 2.0)], [(1, 2, 6.0)])


def test_single_node_job():
    job = build_job([("a", 3.0)], [])
    assert job.entry_nodes == job.exit_nodes == ("a",)
    assert job.topo_order == ("a",)


def test_two_cycle_rejected():
    with pytest.raises(CycleDetected):
        build_job([(1, 1.0), (2, 1.0)], [(1, 2, 0.0), (2, 1, 0.0)])


def test_dangling_edge():
    with pytest.raises(DanglingEdge):
        build_job([(1, 1.0)], [(1, 9, 1.0)])


def test_bad_inputs():
    with pytest.raises(DuplicateNodeId):
        build_job([(1, 1.0), (1, 2.0)], [])
    with pytest.raises(InvalidJob):
        build_job([(1, 0.0)], [])
    with pytest.raises(InvalidJob):
        build_job([(1, 1.0), (2, 1.0)], [(1, 2, -1.0)])
    with pytest.raises(InvalidJob):
        build_job([(1, 1.0)], [(1, 1, 1.0)])
    with pytest.raises(InvalidJob):
        build_job([(1, 1.0)], [], arrival_time=-1.0)


def test_accepts_typed_objects():
    job = build_job([TaskNode(1, 0, 2.0), TaskNode(2, 0, 3.0)], [Edge(1, 2, 1.5)])
    assert job.data(1, 2) == 1.5
    assert job.parents[2] == (1,)
    assert job.total_work == 5.0


def test_rank_up_single_node():
    job = build_job([(0, 4.0)], [])
    assert compute_rank_up(job, 2.0, 3.0)[0] == 2.0


def test_rank_up_chain():
    ru = compute_rank_up(chain(), 2.0, 3.0)
    assert ru[2] == 1.0
    assert ru[1] == 5.0


def test_rank_down_chain():
    rd = compute_rank_down(chain(), 2.0, 3.0)
    assert rd[1] == 0.0
    assert rd[2] == 4.0


def test_fork_rank_symmetric():
    a = build_job([(1, 2.0), (2, 1.0), (3, 1.0)], [(1, 2, 1.0), (1, 3, 1.0)])
    b = build_job([(1, 2.0), (3, 1.0), (2, 1.0)], [(1, 3, 1.0), (1, 2, 1.0)])
    assert compute_rank_up(a, 1.0, 1.0)[1] == compute_rank_up(b, 1.0, 1.0)[1]


def test_diamond_rank_down_symmetric():
    job = build_job([(1, 2.0), (2, 1.0), (3, 1.0), (4, 1.0)],
                    [(1, 2, 1.0), (1, 3, 1.0), (2, 4, 1.0), (3, 4, 1.0)])
    rd = compute_rank_down(job, 1.0, 1.0)
    assert rd[2] == rd[3]


def test_critical_path_examples():
    assert critical_path_lower_bound(build_job([(0, 6.0)], []), 3.0) == 2.0
    assert critical_path_lower_bound(chain(), 2.0) == 3.0
    fork = build_job([(0, 1.0), (1, 10.0), (2, 6.0)], [(0, 1, 0.0), (0, 2, 0.0)])
    path, total = critical_path(fork)
    assert path == [0, 1] and total == 11.0


def test_critical_path_tie_lexicographic():
    job = build_job([(0, 1.0), (1, 2.0), (2, 2.0), (3, 1.0)],
                    [(0, 2, 0.0), (0, 1, 0.0), (1, 3, 0.0), (2, 3, 0.0)])
    assert critical_path(job)[0] == [0, 1, 3]


def test_infinite_bandwidth_means_free_comm():
    ranks = compute_ranks(chain(), 2.0, math.inf)
    assert ranks.rank_up[1] == 3.0
    assert ranks.rank_down[2] == 2.0


def test_node_keys_topological():
    jobs = [build_job([(1, 1.0), (0, 1.0)], [(1, 0, 0.0)], job_id="a"), build_job([(0, 1.0)], [], job_id="b")]
    assert node_keys(jobs) == [("a", 1), ("a", 0), ("b", 0)]


# recursive definitions straight from the path formulation, used as an oracle

def _paths(job, n):
    if not job.children[n]:
        return [[n]]
    return [[n] + p for c in job.children[n] for p in _paths(job, c)]


def _path_cost(job, path, v, c):
    t = sum(job.work(n) / v for n in path)
    return t + sum(job.data(a, b) / c for a, b in zip(path, path[1:]))


@settings(max_examples=60, deadline=None)
@given(dags(max_nodes=7))
def test_rank_up_matches_path_enumeration(job):
    v, c = 2.5, 1.7
    ru = compute_rank_up(job, v, c)
    for n in job.nodes:
        assert ru[n] == pytest.approx(max(_path_cost(job, p, v, c) for p in _paths(job, n)), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(dags(max_nodes=7))
def test_rank_down_matches_path_enumeration(job):
    v, c = 2.5, 1.7
    rd = compute_rank_down(job, v, c)
    for n in job.nodes:
        best = 0.0
        for e in job.entry_nodes:
            for p in _paths(job, e):
                if n in p:
                    pre = p[:p.index(n) + 1]
                    best = max(best, _path_cost(job, pre, v, c) - job.work(n) / v)
        assert rd[n] == pytest.approx(best, rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(dags(max_nodes=8))
def test_topology_properties(job):
    pos = {n: i for i, n in enumerate(job.topo_order)}
    assert sorted(job.topo_order) == sorted(job.nodes)
    for (s, d) in job.edges:
        assert pos[s] < pos[d]
    ru = compute_rank_up(job, 1.3, 0.9)
    for (s, d) in job.edges:
        assert ru[s] > ru[d]
    path, total = critical_path(job)
    assert path[0] in job.entry_nodes and path[-1] in job.exit_nodes
    assert all((a, b) in job.edges for a, b in zip(path, path[1:]))
    assert total == pytest.approx(max(sum(job.work(n) for n in p)
                                      for e in job.entry_nodes for p in _paths(job, e)), rel=1e-12)


def test_random_jobs_equal_after_rebuild():
    rng = np.random.default_rng(3)
    job = random_job(rng, 9)
    again = build_job([(n, job.work(n)) for n in job.nodes], [(s, d, e.data) for (s, d), e in job.edges.items()])
    assert job == again
