import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dagsched.allocator import Placement, ScheduleRecord
from dagsched.baselines import BASELINES
from dagsched.cluster import cluster_from_speeds, make_cluster
from dagsched.dag import build_job, critical_path_lower_bound
from dagsched.errors import EmptySamples, IncompleteSchedule
from dagsched.metrics import (MetricsReport, aggregate, latency_stats, makespan, report, reports_to_csv, slr,
                              speedup)
from dagsched.simulator import SimConfig, run
from dagsched.workload import WorkloadSpec, generate


def sched(cluster, *placements):
    s = ScheduleRecord(cluster)
    for p in placements:
        s.add(p)
    return s


def test_single_task_makespan():
    c = cluster_from_speeds([3.0])
    job = build_job([(0, 6.0)], [])
    s = sched(c, Placement(0, 0, 0, 0.0, 2.0))
    assert makespan(s, [job]) == 2.0
    assert speedup(s, [job], c) == 1.0
    assert slr(s, [job], c) == 1.0


def test_two_parallel_tasks():
    c = cluster_from_speeds([2.0, 2.0])
    job = build_job([(0, 4.0), (1, 4.0)], [])
    s = sched(c, Placement(0, 0, 0, 0.0, 2.0), Placement(0, 1, 1, 0.0, 2.0))
    assert makespan(s, [job]) == 2.0
    assert speedup(s, [job], c) == 2.0


def test_duplicates_excluded_from_makespan():
    c = cluster_from_speeds([1.0, 1.0])
    job = build_job([(0, 1.0), (1, 1.0)], [(0, 1, 4.0)])
    s = sched(c, Placement(0, 0, 0, 0.0, 1.0), Placement(0, 0, 1, 0.0, 1.0, True), Placement(0, 1, 1, 1.0, 2.0))
    assert makespan(s, [job]) == 2.0
    assert s.n_duplicates == 1


def test_slr_chain_on_slowest_executor():
    c = cluster_from_speeds([1.0, 4.0])
    job = build_job([(0, 2.0), (1, 4.0), (2, 2.0)], [(0, 1, 0.0), (1, 2, 0.0)])
    s = sched(c, Placement(0, 0, 0, 0.0, 2.0), Placement(0, 1, 0, 2.0, 6.0), Placement(0, 2, 0, 6.0, 8.0))
    assert slr(s, [job], c) == pytest.approx(4.0 / 1.0, rel=1e-12)


def test_speedup_invariant_to_time_rescaling():
    c1, c2 = cluster_from_speeds([1.0, 2.0]), cluster_from_speeds([10.0, 20.0])
    j1 = build_job([(0, 3.0), (1, 5.0)], [])
    s1 = sched(c1, Placement(0, 0, 0, 0.0, 3.0), Placement(0, 1, 1, 0.0, 2.5))
    s2 = sched(c2, Placement(0, 0, 0, 0.0, 0.3), Placement(0, 1, 1, 0.0, 0.25))
    assert speedup(s1, [j1], c1) == pytest.approx(speedup(s2, [j1], c2), rel=1e-12)


def test_incomplete_schedule():
    c = cluster_from_speeds([1.0])
    job = build_job([(0, 1.0), (1, 1.0)], [])
    s = sched(c, Placement(0, 0, 0, 0.0, 1.0))
    for fn in (lambda: makespan(s, [job]), lambda: slr(s, [job], c), lambda: makespan(ScheduleRecord(c))):
        with pytest.raises(IncompleteSchedule):
            fn()


def test_multi_job_slr_is_mean_per_job():
    c = cluster_from_speeds([1.0])
    a = build_job([(0, 2.0)], [], job_id=0)
    b = build_job([(0, 2.0)], [], arrival_time=1.0, job_id=1)
    s = sched(c, Placement(0, 0, 0, 0.0, 2.0), Placement(1, 0, 0, 2.0, 4.0))
    # job 0: 2 / 2; job 1: (4 - 1) / 2
    assert slr(s, [a, b], c) == (1.0 + 1.5) / 2


def test_latency_stats_examples():
    st_ = latency_stats(list(range(1, 101)))
    assert (st_.p50, st_.p98, st_.max) == (50, 98, 100)
    one = latency_stats([0.7])
    assert one.p50 == one.p98 == one.max == 0.7
    flat = latency_stats([3.0] * 100)
    assert flat.p50 == flat.p98 == flat.max == 3.0
    with pytest.raises(EmptySamples):
        latency_stats([])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=1, max_size=300))
def test_percentiles_are_samples_and_ordered(xs):
    s = latency_stats(xs)
    assert s.p50 <= s.p98 <= s.max == max(xs)
    assert s.p50 in xs and s.p98 in xs
    # nearest rank: at least q% of samples are <= the percentile
    assert sum(x <= s.p98 for x in xs) >= math.ceil(0.98 * len(xs))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(sorted(BASELINES)), st.sampled_from(["batch", "continuous"]))
def test_slr_at_least_one_on_random_runs(seed, policy, mode):
    if policy == "heft" and mode == "continuous":
        mode = "batch"
    wl = generate(WorkloadSpec(n_jobs=3, seed=seed, mode=mode, size_class=2))
    c = make_cluster(4, seed=seed)
    res = run(wl, c, BASELINES[policy](), SimConfig(mode=mode, seed=seed))
    assert slr(res.schedule, wl, c) >= 1.0 - 1e-9
    assert makespan(res.schedule, wl) >= max(critical_path_lower_bound(j, c.max_speed) for j in wl) * (1 - 1e-9)
    assert speedup(res.schedule, wl, c) > 0


def test_report_csv_and_aggregate():
    c = cluster_from_speeds([1.0])
    job = build_job([(0, 2.0)], [])
    s = sched(c, Placement(0, 0, 0, 0.0, 2.0))
    r1 = report("fifo", 0, [job], c, s, [0.001, 0.002])
    r2 = MetricsReport("fifo", 1, 1, 4.0, 0.5, 2.0, 0, 1.0, 1.0, 1.0)
    text = reports_to_csv([r1, r2])
    assert text.splitlines()[0] == ",".join(MetricsReport.DETERMINISTIC)
    assert "latency" not in text
    (row,) = aggregate([r1, r2])
    assert row["runs"] == 2 and row["makespan_mean"] == 3.0 and row["makespan_std"] == 1.0
    assert np.isclose(r1.latency_p98_ms, 2.0)
