import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dagsched.errors import InvalidSpec, ParseError
from dagsched.workload import (N_SHAPES, SIZE_CLASSES, ClusterConfig, WorkloadSpec, generate, load,
                               load_cluster_config, make_job, save, save_cluster_config, shape_template)

# sha256 of json.dumps([shape_template(i) for i in 1..22]); changing a template breaks old seeds
CATALOG_SHA256 = "5dbdfda1e108676aa7e140f194619ffbce0401cf39b107edaf1c923bbaed9ab2"


def as_doc(jobs):
    return [(j.id, j.arrival_time, sorted((n, j.work(n)) for n in j.nodes),
             sorted((s, d, e.data) for (s, d), e in j.edges.items())) for j in jobs]


def test_catalog_is_frozen():
    doc = [shape_template(i) for i in range(1, N_SHAPES + 1)]
    assert hashlib.sha256(json.dumps(doc).encode()).hexdigest() == CATALOG_SHA256


@pytest.mark.parametrize("shape_id", range(1, N_SHAPES + 1))
def test_every_shape_is_a_dag_of_5_to_40_nodes(shape_id):
    n, edges = shape_template(shape_id)
    assert 5 <= n <= 40
    job = make_job(shape_id, 2, np.random.default_rng(0))  # build_job rejects cycles
    assert len(job.nodes) == n and len(job.edges) == len(edges)


def test_unknown_shape_and_bad_specs():
    with pytest.raises(InvalidSpec):
        shape_template(0)
    for bad in (dict(n_jobs=0), dict(size_class=3), dict(mode="poisson"), dict(shape_id=99),
                dict(mean_interarrival=0.0)):
        with pytest.raises(InvalidSpec):
            generate(WorkloadSpec(**bad))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 6))
def test_generation_is_deterministic(seed, n):
    spec = WorkloadSpec(n_jobs=n, seed=seed, mode="continuous")
    assert as_doc(generate(spec)) == as_doc(generate(spec))


def test_size_class_scales_linearly():
    big = make_job(7, 100, np.random.default_rng(4))
    small = make_job(7, 2, np.random.default_rng(4))
    for n in big.nodes:
        assert big.work(n) == pytest.approx(50 * small.work(n), rel=1e-12)
    for k, e in big.edges.items():
        assert e.data == pytest.approx(50 * small.edges[k].data, rel=1e-12)


def test_batch_arrivals_are_zero():
    assert all(j.arrival_time == 0.0 for j in generate(WorkloadSpec(n_jobs=8, seed=1)))


def test_continuous_arrivals_start_at_zero_and_increase():
    jobs = generate(WorkloadSpec(n_jobs=30, seed=2, mode="continuous"))
    arr = [j.arrival_time for j in jobs]
    assert arr[0] == 0.0
    assert all(b >= a for a, b in zip(arr, arr[1:]))
    # exponential gaps with mean 45: a loose sanity band over 29 gaps
    assert 15.0 < arr[-1] / 29 < 100.0


def test_sizes_drawn_from_catalog():
    jobs = generate(WorkloadSpec(n_jobs=40, seed=3))
    lo = min(SIZE_CLASSES) * 0.5
    assert all(min(j.work(n) for n in j.nodes) >= lo for j in jobs)


def test_round_trip(tmp_path):
    jobs = generate(WorkloadSpec(n_jobs=20, seed=9, mode="continuous"))
    save(jobs, tmp_path / "wl.json")
    assert as_doc(load(tmp_path / "wl.json")) == as_doc(jobs)


def test_minimal_hand_written_file(tmp_path):
    p = tmp_path / "one.json"
    p.write_text('[{"id": "q1", "arrival_time": 0, "nodes": [{"id": "a", "work": 2},'
                 ' {"id": "b", "work": 1}], "edges": [{"src": "a", "dst": "b", "data": 0.5}]}]')
    (job,) = load(p)
    assert job.id == "q1" and job.work("a") == 2.0 and job.edges[("a", "b")].data == 0.5


def test_truncated_file_raises_parse_error(tmp_path):
    save(generate(WorkloadSpec(n_jobs=2, seed=0)), tmp_path / "wl.json")
    text = (tmp_path / "wl.json").read_text()
    (tmp_path / "cut.json").write_text(text[: len(text) // 2])
    with pytest.raises(ParseError):
        load(tmp_path / "cut.json")


@pytest.mark.parametrize("doc", [
    {"id": 0},
    [{"id": 0, "arrival_time": 0, "nodes": []}],
    [{"id": 0, "arrival_time": "soon", "nodes": [], "edges": []}],
    [{"id": 0, "arrival_time": 0, "nodes": [{"id": 0, "work": 1}, {"id": 1, "work": 1}],
      "edges": [{"src": 0, "dst": 1, "data": 1}, {"src": 1, "dst": 0, "data": 1}]}],
])
def test_malformed_documents(tmp_path, doc):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ParseError):
        load(p)


def test_cluster_config_round_trip(tmp_path):
    cfg = ClusterConfig(n_executors=7, speed_table=(1.0, 3.0), uniform_bandwidth=2.0, seed=5)
    save_cluster_config(cfg, tmp_path / "c.json")
    back = load_cluster_config(tmp_path / "c.json")
    assert back == cfg
    assert [e.speed for e in back.build().executors] == [e.speed for e in cfg.build().executors]
    (tmp_path / "bad.json").write_text('{"n_executors": 0, "speed_table": [1], "uniform_bandwidth": 1, "seed": 0}')
    with pytest.raises(ParseError):
        load_cluster_config(tmp_path / "bad.json")
