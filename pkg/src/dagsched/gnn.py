"""Learned node selection: features, message passing, summaries and the score head.

Per-node embedding (applied ``layers`` times with shared parameters)::

    e_n = g(sum of children's e) + h(sum of outgoing edge features) + x_n

Each layer reads the previous layer's embeddings, so a node sees descendants
up to ``layers`` hops away.  Job summaries pool their nodes' embeddings (plus
job attributes) through one network, the global summary pools job summaries
through another, and a 32/16/8 head scores every frontier node from
``[e_n | job summary | global summary | executor features | x_n]``.

All sums over sets (children, job members, jobs) are taken over values sorted
per component, so relabelling nodes permutes the outputs bit-for-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .dag import Job
from .errors import DimMismatch, EmptyFrontier
from .nn import DenseNet, load_checkpoint, save_checkpoint
from .simulator import Policy, SimState

NODE_DIM = 8       # [w/v, in-data time, out-data time, rank_up, rank_down, left tasks, left work, executable]
EDGE_DIM = 2       # [data, data / mean bandwidth]
JOB_DIM = 2        # [left tasks, left work]
EXEC_DIM = 5       # [executors, mean speed, max speed, idle fraction, earliest free - now]
CRITIC_DIM = 7 + EXEC_DIM
EMBED_DIM = NODE_DIM
HEAD_IN = 3 * EMBED_DIM + EXEC_DIM + NODE_DIM
HEAD_HIDDEN = (32, 16, 8)


class RunningNorm:
    """Per-dimension standardisation from running mean/variance (Chan's merge)."""

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, x) -> None:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        n = x.shape[0]
        if n == 0:
            return
        mean_b = x.mean(axis=0)
        m2_b = ((x - mean_b) ** 2).sum(axis=0)
        tot = self.count + n
        delta = mean_b - self.mean
        self.mean = self.mean + delta * (n / tot)
        self.m2 = self.m2 + m2_b + delta ** 2 * (self.count * n / tot)
        self.count = tot

    def merge(self, other: "RunningNorm") -> None:
        if other.count == 0:
            return
        tot = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / tot)
        self.m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / tot)
        self.count = tot

    @property
    def std(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        s = np.sqrt(self.m2 / self.count)
        return np.where(s > 1e-8, s, 1.0)

    @property
    def center(self) -> np.ndarray:
        return self.mean if self.count >= 2 else np.zeros(self.dim)

    def __call__(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.std

    def state_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(), "m2": self.m2.tolist()}

    def load_state_dict(self, d: dict) -> None:
        self.count = int(d["count"])
        self.mean = np.asarray(d["mean"], dtype=float)
        self.m2 = np.asarray(d["m2"], dtype=float)


# ---------------------------------------------------------------------------
# features

@dataclass
class _JobStatic:
    ids: list
    index: dict
    static: np.ndarray      # (n, 5)
    children: np.ndarray    # (n, D) local indices, -1 padded
    edge_sum: np.ndarray    # (n, 2) raw sums over outgoing edges
    edge_count: np.ndarray  # (n,)
    work: np.ndarray        # (n,)
    rank_up: np.ndarray


def _mean_exact(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else 0.0


def _job_static(job: Job, ranks, mean_speed: float, mean_bw: float) -> _JobStatic:
    ids = list(job.nodes)
    index = {n: i for i, n in enumerate(ids)}

    def comm(e):
        return 0.0 if math.isinf(mean_bw) else e / mean_bw

    static = np.array([[job.nodes[n].work / mean_speed,
                        _mean_exact(comm(job.edges[(p, n)].data) for p in job.parents[n]),
                        _mean_exact(comm(job.edges[(n, c)].data) for c in job.children[n]),
                        ranks.rank_up[n], ranks.rank_down[n]] for n in ids], dtype=float).reshape(len(ids), 5)
    D = max([1] + [len(job.children[n]) for n in ids])
    children = np.full((len(ids), D), -1, dtype=np.int64)
    edge_sum = np.zeros((len(ids), EDGE_DIM))
    for i, n in enumerate(ids):
        ch = job.children[n]
        children[i, :len(ch)] = [index[c] for c in ch]
        data = [job.edges[(n, c)].data for c in ch]
        edge_sum[i] = (math.fsum(data), math.fsum(comm(d) for d in data))
    return _JobStatic(ids, index, static, children, edge_sum,
                      np.array([len(job.children[n]) for n in ids], dtype=float),
                      np.array([job.nodes[n].work for n in ids]),
                      static[:, 3].copy())


def executor_features(state: SimState) -> np.ndarray:
    lf = state.schedule.timeline.last_finish
    now = state.now
    return np.array([len(lf), state.cluster.mean_speed, state.cluster.max_speed,
                     float(np.mean(lf <= now)), float(np.maximum(lf, now).min() - now)])


def extract_features(state: SimState, key, norm: Optional[RunningNorm] = None) -> np.ndarray:
    """Feature vector of one node, standardised when ``norm`` is given."""
    job_id, n = key
    job = state.jobs[job_id]
    ranks = state.ranks[job_id]
    mb = state.mean_bandwidth

    def comm(e):
        return 0.0 if math.isinf(mb) else e / mb

    x = np.array([job.nodes[n].work / state.mean_speed,
                  _mean_exact(comm(job.edges[(p, n)].data) for p in job.parents[n]),
                  _mean_exact(comm(job.edges[(n, c)].data) for c in job.children[n]),
                  ranks.rank_up[n], ranks.rank_down[n],
                  state.left_tasks(job_id), state.left_work(job_id),
                  1.0 if state.in_frontier(key) else 0.0])
    return norm(x) if norm is not None else x


def remaining_path_bound(state: SimState, keys) -> float:
    """Latest (earliest start + rank_up) over ``keys``, floored at the schedule horizon.

    The earliest start is bounded by the parents' finish times and by the
    first moment any executor is free.  A cheap estimate of when the workload
    can finish; the critic sees it relative to the current decision clock.
    """
    bound = state.schedule.timeline.horizon
    first_free = max(state.now, float(state.schedule.timeline.last_finish.min()))
    for job_id, n in keys:
        job = state.jobs[job_id]
        ready = max([first_free, job.arrival_time]
                    + [state.schedule.primary((job_id, p)).aft for p in job.parents[n]])
        bound = max(bound, ready + state.ranks[job_id].rank_up[n])
    return bound


@dataclass
class Observation:
    x: np.ndarray             # (N, NODE_DIM) raw
    edge_sum: np.ndarray      # (N, EDGE_DIM) raw
    edge_count: np.ndarray    # (N,)
    children: np.ndarray      # (N, D) row indices, N = padding
    job_of: np.ndarray        # (N,)
    members: np.ndarray       # (J, M) row indices, N = padding
    job_attr: np.ndarray      # (J, JOB_DIM) raw
    exec_feat: np.ndarray     # (EXEC_DIM,) raw
    critic: np.ndarray        # (CRITIC_DIM,) raw
    frontier: np.ndarray      # (F,) row indices
    frontier_keys: list
    row_keys: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.x.shape[0]


@dataclass
class StepInfo:
    obs: Observation
    action: int
    log_prob: float
    cache: Any = None


def _sorted_sum(values: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """out[i] = sum_j values[idx[i, j]] with idx == len(values) meaning zero; order independent."""
    padded = np.vstack([values, np.zeros((1, values.shape[1]))])
    return np.sort(padded[idx], axis=1).sum(axis=1)


def _scatter_back(grad: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n + 1, grad.shape[1]))
    np.add.at(out, idx.ravel(), np.repeat(grad, idx.shape[1], axis=0))
    return out[:n]


# ---------------------------------------------------------------------------
# network pieces

def embed(g: DenseNet, h: DenseNet, X: np.ndarray, A: np.ndarray, children: np.ndarray, layers: int = 3):
    """Stacked message passing; returns final embeddings and a backward cache."""
    if X.shape[1] != g.out_dim or A.shape[1] != h.in_dim:
        raise DimMismatch("feature widths do not match aggregator networks")
    Hh, tape_h = h.forward(A)
    E = X
    tapes = []
    for _ in range(layers):
        Z = _sorted_sum(E, children)
        G, tape = g.forward(Z)
        tapes.append(tape)
        E = G + Hh + X
    return E, (tape_h, tapes, children, X.shape[0])


def embed_backward(g: DenseNet, h: DenseNet, cache, dE: np.ndarray):
    tape_h, tapes, children, n = cache
    g_grads = [np.zeros_like(p) for p in g.params]
    dH = np.zeros_like(dE)
    for tape in reversed(tapes):
        dH += dE
        pg, dZ = g.backward(tape, dE)
        for acc, d in zip(g_grads, pg):
            acc += d
        dE = _scatter_back(dZ, children, n)
    h_grads, _ = h.backward(tape_h, dH)
    return g_grads, h_grads


def summarize(job_net: DenseNet, glob_net: DenseNet, E: np.ndarray, members: np.ndarray, job_attr: np.ndarray):
    if members.shape[0] == 0:
        # nothing has arrived: both summaries are zero by convention
        return np.zeros((0, job_net.out_dim)), np.zeros(glob_net.out_dim), None
    pooled = _sorted_sum(E, members)
    Y, tape_j = job_net.forward(np.hstack([pooled, job_attr]))
    S = np.sort(Y, axis=0).sum(axis=0)
    Gs, tape_g = glob_net.forward(S)
    return Y, Gs, (tape_j, tape_g, members, E.shape[0])


def summarize_backward(job_net: DenseNet, glob_net: DenseNet, cache, dY: np.ndarray, dGs: np.ndarray):
    tape_j, tape_g, members, n = cache
    glob_grads, dS = glob_net.backward(tape_g, dGs)
    dY = dY + dS[None, :]
    job_grads, dIn = job_net.backward(tape_j, dY)
    dE = _scatter_back(dIn[:, :EMBED_DIM], members, n)
    return job_grads, glob_grads, dE


def log_softmax(q: np.ndarray) -> np.ndarray:
    z = q - q.max()
    return z - np.log(np.exp(z).sum())


def softmax(q: np.ndarray) -> np.ndarray:
    z = np.exp(q - q.max())
    return z / z.sum()


def score_and_select(logits: np.ndarray, rng: Optional[np.random.Generator], greedy: bool = False):
    """Pick an index from frontier scores.  Returns (index, log_prob, distribution)."""
    if logits.size == 0:
        raise EmptyFrontier("no candidates to score")
    logp = log_softmax(logits)
    probs = np.exp(logp)
    if greedy or rng is None:
        a = int(np.argmax(logits))
    else:
        cdf = np.cumsum(probs)
        a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        a = min(a, logits.size - 1)
    return a, float(logp[a]), probs


# ---------------------------------------------------------------------------
# the policy

class GNNPolicy(Policy):
    """Two-phase learned policy: this network picks the node, DEFT places it."""

    name = "lachesis"

    def __init__(self, seed: int = 0, greedy: bool = False, layers: int = 3):
        rng = np.random.default_rng(seed)
        self.layers = layers
        self.greedy = greedy
        self.g = DenseNet([EMBED_DIM, 16, EMBED_DIM], rng, name="child_agg")
        self.h = DenseNet([EDGE_DIM, 8, EMBED_DIM], rng, name="edge_agg")
        self.job_net = DenseNet([EMBED_DIM + JOB_DIM, 16, EMBED_DIM], rng, name="job_summary")
        self.glob_net = DenseNet([EMBED_DIM, 16, EMBED_DIM], rng, name="global_summary")
        self.head = DenseNet([HEAD_IN, *HEAD_HIDDEN, 1], rng, name="score_head")
        self.norms = {"x": RunningNorm(NODE_DIM), "edge": RunningNorm(EDGE_DIM), "job": RunningNorm(JOB_DIM),
                      "exec": RunningNorm(EXEC_DIM), "critic": RunningNorm(CRITIC_DIM)}
        self.collect_stats = False
        self.keep_cache = False   # trainer sets this so updates can reuse rollout forwards
        self._pending = {k: RunningNorm(v.dim) for k, v in self.norms.items()}
        self._rng = np.random.default_rng(seed)
        self._cache: dict = {}

    @property
    def nets(self) -> dict:
        return {"child_agg": self.g, "edge_agg": self.h, "job_summary": self.job_net,
                "global_summary": self.glob_net, "score_head": self.head}

    @property
    def params(self) -> list[np.ndarray]:
        return [p for net in self.nets.values() for p in net.params]

    # -- simulator hooks --------------------------------------------------
    def reset(self, state: SimState) -> None:
        self._rng = np.random.default_rng(state.config.seed)
        self._cache = {}

    def _static(self, state: SimState, job_id) -> _JobStatic:
        job = state.jobs[job_id]
        hit = self._cache.get(job_id)
        if hit is None or hit[0] is not job or hit[1] is not state:
            hit = (job, state, _job_static(job, state.ranks[job_id], state.mean_speed, state.mean_bandwidth))
            self._cache[job_id] = hit
        return hit[2]

    def observe(self, state: SimState) -> Observation:
        rows_x, rows_es, rows_ec, rows_ch, job_of, member_rows, job_attr = [], [], [], [], [], [], []
        row_keys = []
        offset = 0
        frontier_rows, frontier_keys = [], []
        max_rank_up = 0.0
        for ji, job_id in enumerate(state.active_jobs()):
            st = self._static(state, job_id)
            un = state.unassigned[job_id]
            mask = np.fromiter((n in un for n in st.ids), dtype=bool, count=len(st.ids))
            local = np.flatnonzero(mask)
            remap = np.full(len(st.ids) + 1, -1, dtype=np.int64)
            remap[local] = offset + np.arange(len(local))
            left_tasks = float(len(local))
            left_work = state.left_work(job_id)
            x = np.empty((len(local), NODE_DIM))
            x[:, :5] = st.static[local]
            x[:, 5] = left_tasks
            x[:, 6] = left_work
            x[:, 7] = 0.0
            ch = remap[st.children[local]]  # -1 padding maps through remap[-1] == -1
            rows_x.append(x)
            rows_es.append(st.edge_sum[local])
            rows_ec.append(st.edge_count[local])
            rows_ch.append(ch)
            job_of.append(np.full(len(local), ji, dtype=np.int64))
            member_rows.append(offset + np.arange(len(local)))
            job_attr.append((left_tasks, left_work))
            max_rank_up = max(max_rank_up, float(st.rank_up[local].max()))
            row_keys.extend((job_id, st.ids[i]) for i in local)
            offset += len(local)
        N = offset
        frontier_keys = state.frontier()
        key_row = {k: i for i, k in enumerate(row_keys)}
        frontier_rows = np.array([key_row[k] for k in frontier_keys], dtype=np.int64)

        X = np.vstack(rows_x) if rows_x else np.zeros((0, NODE_DIM))
        X[frontier_rows, 7] = 1.0
        D = max([1] + [c.shape[1] for c in rows_ch])
        children = np.full((N, D), N, dtype=np.int64)
        r = 0
        for c in rows_ch:
            blk = np.where(c < 0, N, c)
            children[r:r + len(c), :blk.shape[1]] = blk
            r += len(c)
        M = max([1] + [len(m) for m in member_rows])
        members = np.full((len(member_rows), M), N, dtype=np.int64)
        for i, m in enumerate(member_rows):
            members[i, :len(m)] = m

        exec_feat = executor_features(state)
        clock = max(state.now, state.schedule.timeline.horizon)
        tot_tasks = float(N)
        tot_work = math.fsum(a[1] for a in job_attr)
        critic = np.concatenate([[tot_tasks, tot_work, max_rank_up,
                                  state.schedule.timeline.horizon - state.now,
                                  float(len(frontier_keys)), float(len(job_attr)),
                                  remaining_path_bound(state, frontier_keys) - clock], exec_feat])
        obs = Observation(X, np.vstack(rows_es) if rows_es else np.zeros((0, EDGE_DIM)),
                          np.concatenate(rows_ec) if rows_ec else np.zeros(0),
                          children, np.concatenate(job_of) if job_of else np.zeros(0, dtype=np.int64),
                          members, np.array(job_attr, dtype=float).reshape(-1, JOB_DIM),
                          exec_feat, critic, frontier_rows, list(frontier_keys), row_keys)
        if self.collect_stats:
            self._record(obs)
        return obs

    def _record(self, obs: Observation) -> None:
        p = self._pending
        p["x"].update(obs.x)
        p["job"].update(obs.job_attr)
        p["exec"].update(obs.exec_feat)
        p["critic"].update(obs.critic)
        # per-edge statistics from the per-node sums: use nodes with exactly one child
        # plus the mean over multi-child nodes, weighted by edge count
        mask = obs.edge_count > 0
        if mask.any():
            p["edge"].update(obs.edge_sum[mask] / obs.edge_count[mask, None])

    def commit_stats(self) -> None:
        """Fold statistics gathered since the last call into the normalisers."""
        for k, pend in self._pending.items():
            self.norms[k].merge(pend)
        self._pending = {k: RunningNorm(v.dim) for k, v in self.norms.items()}

    # -- differentiable core ----------------------------------------------
    def _inputs(self, obs: Observation):
        nx, ne = self.norms["x"], self.norms["edge"]
        X = nx(obs.x)
        # sum of standardised edge features == (raw sum - k * mean) / std
        A = (obs.edge_sum - obs.edge_count[:, None] * ne.center) / ne.std
        return X, A, self.norms["job"](obs.job_attr), self.norms["exec"](obs.exec_feat)

    def forward(self, obs: Observation):
        """Frontier logits and a cache for :meth:`backward`."""
        X, A, JA, EX = self._inputs(obs)
        E, emb_cache = embed(self.g, self.h, X, A, obs.children, self.layers)
        Y, Gs, sum_cache = summarize(self.job_net, self.glob_net, E, obs.members, JA)
        f = obs.frontier
        F = len(f)
        head_in = np.hstack([E[f], Y[obs.job_of[f]], np.tile(Gs, (F, 1)), np.tile(EX, (F, 1)), X[f]])
        q, tape = self.head.forward(head_in)
        return q[:, 0], (emb_cache, sum_cache, tape, obs, E.shape[0], Y.shape[0])

    def backward(self, cache, dq: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients (ordered like :attr:`params`) given dL/d(logits)."""
        emb_cache, sum_cache, tape, obs, n, J = cache
        head_grads, dIn = self.head.backward(tape, np.asarray(dq, dtype=float)[:, None])
        f = obs.frontier
        dE = np.zeros((n, EMBED_DIM))
        np.add.at(dE, f, dIn[:, :EMBED_DIM])
        dY = np.zeros((J, EMBED_DIM))
        np.add.at(dY, obs.job_of[f], dIn[:, EMBED_DIM:2 * EMBED_DIM])
        dGs = dIn[:, 2 * EMBED_DIM:3 * EMBED_DIM].sum(axis=0)
        job_grads, glob_grads, dE_sum = summarize_backward(self.job_net, self.glob_net, sum_cache, dY, dGs)
        g_grads, h_grads = embed_backward(self.g, self.h, emb_cache, dE + dE_sum)
        return g_grads + h_grads + job_grads + glob_grads + head_grads

    def embeddings(self, obs: Observation) -> np.ndarray:
        X, A, _, _ = self._inputs(obs)
        return embed(self.g, self.h, X, A, obs.children, self.layers)[0]

    def distribution(self, obs: Observation) -> dict:
        q, _ = self.forward(obs)
        return dict(zip(obs.frontier_keys, softmax(q)))

    def select_traced(self, state: SimState):
        obs = self.observe(state)
        q, cache = self.forward(obs)
        a, logp, _ = score_and_select(q, self._rng, self.greedy)
        return obs.frontier_keys[a], StepInfo(obs, a, logp, cache if self.keep_cache else None)

    def select(self, state: SimState):
        return self.select_traced(state)[0]

    # -- persistence -------------------------------------------------------
    def save(self, path, extra: Optional[dict] = None, critic: Optional[DenseNet] = None) -> None:
        nets = dict(self.nets)
        if critic is not None:
            nets["critic"] = critic
        meta = {"norms": {k: v.state_dict() for k, v in self.norms.items()}, "layers": self.layers}
        meta.update(extra or {})
        save_checkpoint(path, nets, meta)

    def load(self, path, critic: Optional[DenseNet] = None) -> dict:
        nets = dict(self.nets)
        if critic is not None:
            nets["critic"] = critic
        extra = load_checkpoint(path, nets)
        for k, d in extra.get("norms", {}).items():
            self.norms[k].load_state_dict(d)
        return extra
