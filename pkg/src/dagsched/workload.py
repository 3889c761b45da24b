"""Seeded synthetic DAG workloads and the JSON workload / cluster file formats.

The shape catalog stands in for query-plan DAGs: 22 frozen templates of 5-40
stages (chains, forks, joins, diamonds, trees, meshes and join pipelines).
Per-node work and per-edge data are drawn per job from the seed and scaled
linearly by the size class.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cluster import DEFAULT_SPEED_TABLE, Cluster, make_cluster
from .dag import Job, build_job
from .errors import InvalidSpec, ParseError, SchedulingError

SIZE_CLASSES = (2, 5, 10, 50, 80, 100)
N_SHAPES = 22
MEAN_INTERARRIVAL = 45.0

# per size unit; a size-2 job lands around 10-100 s on a 2.1-speed executor
WORK_RANGE = (0.5, 2.0)
DATA_RANGE = (0.1, 1.0)


# ---------------------------------------------------------------------------
# shape templates: each returns (n_nodes, [(src, dst), ...]) with ids 0..n-1

def _chain(n):
    return n, [(i, i + 1) for i in range(n - 1)]


def _fork(k):
    return k + 1, [(0, i) for i in range(1, k + 1)]


def _join(k):
    return k + 1, [(i, k) for i in range(k)]


def _fork_join(k):
    return k + 2, [(0, i) for i in range(1, k + 1)] + [(i, k + 1) for i in range(1, k + 1)]


def _layers(widths, connect):
    """Stack layers; ``connect(li, a, b)`` says whether node a of layer li feeds b of layer li+1."""
    ids, nxt = [], 0
    for w in widths:
        ids.append(list(range(nxt, nxt + w)))
        nxt += w
    edges = []
    for li in range(len(widths) - 1):
        for a, u in enumerate(ids[li]):
            for b, v in enumerate(ids[li + 1]):
                if connect(li, a, b):
                    edges.append((u, v))
    return nxt, edges


def _out_tree(branch, depth):
    edges, level, nxt = [], [0], 1
    for _ in range(depth):
        new = []
        for u in level:
            for _ in range(branch):
                edges.append((u, nxt))
                new.append(nxt)
                nxt += 1
        level = new
    return nxt, edges


def _in_tree(branch, depth):
    n, edges = _out_tree(branch, depth)
    return n, [(n - 1 - v, n - 1 - u) for u, v in edges]


def _diamond_chain(k):
    edges, top = [], 0
    for _ in range(k):
        a, b, bottom = top + 1, top + 2, top + 3
        edges += [(top, a), (top, b), (a, bottom), (b, bottom)]
        top = bottom
    return top + 1, edges


def _fork_join_pipeline(stages, width):
    edges, hub, nxt = [], 0, 1
    for _ in range(stages):
        mids = list(range(nxt, nxt + width))
        nxt += width
        edges += [(hub, m) for m in mids] + [(m, nxt) for m in mids]
        hub = nxt
        nxt += 1
    return nxt, edges


def _butterfly(stages, width):
    def connect(li, a, b):
        return a == b or a ^ (1 << (li % max(1, width.bit_length() - 1))) == b
    return _layers([width] * stages, connect)


def _gaussian_elimination(m):
    # pivot k feeds updates (k, j) for j > k; update (k, k+1) feeds pivot k+1
    ids, nxt, edges = {}, 0, []
    for k in range(m - 1):
        ids[("p", k)] = nxt
        nxt += 1
        for j in range(k + 1, m):
            ids[("u", k, j)] = nxt
            nxt += 1
    for k in range(m - 1):
        for j in range(k + 1, m):
            edges.append((ids[("p", k)], ids[("u", k, j)]))
            if k > 0:
                edges.append((ids[("u", k - 1, j)], ids[("u", k, j)]))
        if k + 1 < m - 1:
            edges.append((ids[("u", k, k + 1)], ids[("p", k + 1)]))
    return nxt, edges


def _wavefront(r, c):
    edges = []
    for i in range(r):
        for j in range(c):
            u = i * c + j
            if j + 1 < c:
                edges.append((u, u + 1))
            if i + 1 < r:
                edges.append((u, u + c))
    return r * c, edges


def _map_reduce(maps, reduces):
    edges = [(m, maps + r) for m in range(maps) for r in range(reduces)]
    sink = maps + reduces
    edges += [(maps + r, sink) for r in range(reduces)]
    return sink + 1, edges


def _scan_join_plan(scans, chain_len):
    """Scan chains joined pairwise left-deep, then aggregate and sort."""
    edges, nxt, tails = [], 0, []
    for _ in range(scans):
        n, e = _chain(chain_len)
        edges += [(a + nxt, b + nxt) for a, b in e]
        tails.append(nxt + n - 1)
        nxt += n
    acc = tails[0]
    for t in tails[1:]:
        edges += [(acc, nxt), (t, nxt)]
        acc = nxt
        nxt += 1
    edges += [(acc, nxt), (nxt, nxt + 1)]
    return nxt + 2, edges


def _pseudo_random_layers(widths, density, salt):
    """Layered DAG with a fixed hash-based edge pattern; every node keeps a parent and a child."""
    def connect(li, a, b):
        h = (li * 7919 + a * 104729 + b * 1299709 + salt) % 1000
        return h < density * 1000 or a % widths[li + 1] == b or b % widths[li] == a
    return _layers(widths, connect)


SHAPES = {
    1: lambda: _chain(5),
    2: lambda: _chain(10),
    3: lambda: _fork(6),
    4: lambda: _join(6),
    5: lambda: _fork_join(8),
    6: lambda: _diamond_chain(3),
    7: lambda: _out_tree(2, 3),
    8: lambda: _in_tree(2, 3),
    9: lambda: _layers([3, 4, 4, 1], lambda li, a, b: True),
    10: lambda: _pseudo_random_layers([4, 5, 5, 5, 1], 0.3, 11),
    11: lambda: _fork_join(16),
    12: lambda: _scan_join_plan(2, 5),
    13: lambda: _fork_join_pipeline(2, 3),
    14: lambda: _layers([1, 3, 9, 1], lambda li, a, b: li != 1 or b // 3 == a),
    15: lambda: _butterfly(4, 4),
    16: lambda: _gaussian_elimination(5),
    17: lambda: _wavefront(5, 5),
    18: lambda: _pseudo_random_layers([6, 6, 6, 6, 6], 0.25, 18),
    19: lambda: _map_reduce(8, 4),
    20: lambda: _in_tree(2, 4),
    21: lambda: _pseudo_random_layers([5, 8, 9, 8, 6, 4], 0.2, 21),
    22: lambda: _scan_join_plan(6, 3),
}


def shape_template(shape_id: int) -> tuple[int, list]:
    if shape_id not in SHAPES:
        raise InvalidSpec(f"shape_id must be in 1..{N_SHAPES}, got {shape_id!r}")
    n, edges = SHAPES[shape_id]()
    return n, sorted(set(edges))


# ---------------------------------------------------------------------------
# generation

@dataclass
class WorkloadSpec:
    n_jobs: int = 1
    shape_id: Optional[int] = None      # None: drawn per job from the catalog
    size_class: Optional[int] = None    # None: drawn per job from SIZE_CLASSES
    mode: str = "batch"
    seed: int = 0
    mean_interarrival: float = MEAN_INTERARRIVAL

    def validate(self):
        if self.n_jobs < 1:
            raise InvalidSpec("n_jobs must be >= 1")
        if self.shape_id is not None and self.shape_id not in SHAPES:
            raise InvalidSpec(f"shape_id must be in 1..{N_SHAPES}")
        if self.size_class is not None and self.size_class not in SIZE_CLASSES:
            raise InvalidSpec(f"size_class must be one of {SIZE_CLASSES}")
        if self.mode not in ("batch", "continuous"):
            raise InvalidSpec("mode must be 'batch' or 'continuous'")
        if not self.mean_interarrival > 0:
            raise InvalidSpec("mean_interarrival must be positive")
        return self


def make_job(shape_id: int, size_class: float, rng: np.random.Generator, job_id=0,
             arrival_time: float = 0.0) -> Job:
    n, edges = shape_template(shape_id)
    work = rng.uniform(*WORK_RANGE, size=n)
    data = rng.uniform(*DATA_RANGE, size=len(edges))
    return build_job([(i, float(work[i] * size_class)) for i in range(n)],
                     [(s, d, float(data[k] * size_class)) for k, (s, d) in enumerate(edges)],
                     arrival_time, job_id)


def poisson_arrivals(n: int, mean_interarrival: float, rng: np.random.Generator) -> list[float]:
    """First arrival at 0, then exponential gaps."""
    gaps = rng.exponential(mean_interarrival, size=max(0, n - 1))
    return [0.0] + np.cumsum(gaps).tolist()


def generate(spec: WorkloadSpec) -> list[Job]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shapes = [spec.shape_id or int(rng.integers(1, N_SHAPES + 1)) for _ in range(spec.n_jobs)]
    sizes = [spec.size_class or int(rng.choice(SIZE_CLASSES)) for _ in range(spec.n_jobs)]
    if spec.mode == "continuous":
        arrivals = poisson_arrivals(spec.n_jobs, spec.mean_interarrival, rng)
    else:
        arrivals = [0.0] * spec.n_jobs
    return [make_job(shapes[i], sizes[i], rng, i, arrivals[i]) for i in range(spec.n_jobs)]


# ---------------------------------------------------------------------------
# file formats

def job_to_dict(job: Job) -> dict:
    return {
        "id": job.id,
        "arrival_time": job.arrival_time,
        "nodes": [{"id": n, "work": job.nodes[n].work} for n in job.nodes],
        "edges": [{"src": e.src, "dst": e.dst, "data": e.data} for e in job.edges.values()],
    }


def workload_to_list(workload: Sequence[Job]) -> list:
    return [job_to_dict(j) for j in workload]


def _field(obj, name, where, types=None):
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    if name not in obj:
        raise ParseError(f"{where}: missing field '{name}'")
    v = obj[name]
    if types is not None and (not isinstance(v, types) or isinstance(v, bool)):
        raise ParseError(f"{where}.{name}: expected {getattr(types, '__name__', types)}, got {v!r}")
    return v


def workload_from_list(doc) -> list[Job]:
    if not isinstance(doc, list):
        raise ParseError("workload document must be a list of jobs")
    jobs = []
    for i, jd in enumerate(doc):
        where = f"jobs[{i}]"
        jid = _field(jd, "id", where, (int, str))
        arrival = _field(jd, "arrival_time", where, (int, float))
        nodes = _field(jd, "nodes", where, list)
        edges = _field(jd, "edges", where, list)
        ns = [(_field(nd, "id", f"{where}.nodes[{k}]", (int, str)),
               _field(nd, "work", f"{where}.nodes[{k}]", (int, float))) for k, nd in enumerate(nodes)]
        es = [(_field(ed, "src", f"{where}.edges[{k}]", (int, str)),
               _field(ed, "dst", f"{where}.edges[{k}]", (int, str)),
               _field(ed, "data", f"{where}.edges[{k}]", (int, float))) for k, ed in enumerate(edges)]
        try:
            jobs.append(build_job(ns, es, float(arrival), jid))
        except SchedulingError as exc:
            raise ParseError(f"{where}: {exc}") from exc
    return jobs


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_json(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def save(workload: Sequence[Job], path) -> None:
    atomic_write_text(path, json.dumps(workload_to_list(workload), indent=1) + "\n")


def load(path) -> list[Job]:
    doc = _load_json(path)
    try:
        return workload_from_list(doc)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


@dataclass
class ClusterConfig:
    n_executors: int = 50
    speed_table: tuple = DEFAULT_SPEED_TABLE
    uniform_bandwidth: float = 1.0
    seed: int = 0

    def build(self) -> Cluster:
        return make_cluster(self.n_executors, self.speed_table, self.uniform_bandwidth, self.seed)


def save_cluster_config(cfg: ClusterConfig, path) -> None:
    d = asdict(cfg)
    d["speed_table"] = list(cfg.speed_table)
    atomic_write_text(path, json.dumps(d, indent=1) + "\n")


def load_cluster_config(path) -> ClusterConfig:
    d = _load_json(path)
    where = str(path)
    n = _field(d, "n_executors", where, int)
    table = _field(d, "speed_table", where, list)
    bw = _field(d, "uniform_bandwidth", where, (int, float))
    seed = _field(d, "seed", where, int)
    if n < 1 or not table or bw <= 0 or any(not isinstance(s, (int, float)) or s <= 0 for s in table):
        raise ParseError(f"{where}: invalid cluster config values")
    return ClusterConfig(n, tuple(float(s) for s in table), float(bw), seed)
