"""Synchronous advantage actor-critic for the learned node-selection policy.

Each iteration draws an episode length ``tau ~ Exp(tau_mean)``, runs
``rollouts`` truncated episodes on workloads sampled from the training suite,
regresses the critic toward one-step targets ``y_k = r_k + gamma * V(s_{k+1})``
and moves the actor along ``grad log pi(a_k | s_k) * (y_k - V(s_k))``.
Afterwards ``tau_mean`` grows by ``tau_step``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .cluster import Cluster
from .dag import Job
from .errors import InvalidSpec, NonFiniteGradient
from .gnn import CRITIC_DIM, GNNPolicy, softmax
from .nn import Adam, DenseNet, sgd_step
from .simulator import EpisodeTrace, SimConfig, run
from .workload import ClusterConfig, WorkloadSpec, atomic_write_text, generate

CURVE_COLUMNS = ("iteration", "actor_loss", "critic_loss", "mean_return")


@dataclass
class TrainerConfig:
    learning_rate: float = 1e-3
    gamma: float = 1.0
    tau_mean: float = 50.0
    tau_step: float = 5.0
    iterations: int = 500
    rollouts: int = 4
    seed: int = 0
    entropy_coef: float = 0.01
    reward_scale: float = 0.1
    optimizer: str = "adam"
    # training suite
    n_jobs: int = 5
    size_class: int = 2
    suite_size: int = 10
    suite_seed: int = 0
    n_executors: int = 6
    cluster_seed: int = 0
    warmup_episodes: int = 4

    def validate(self) -> "TrainerConfig":
        if not self.learning_rate >= 0:
            raise InvalidSpec("learning_rate must be >= 0")
        if not 0 < self.gamma <= 1:
            raise InvalidSpec("gamma must lie in (0, 1]")
        if self.tau_step < 0 or self.tau_mean <= 0:
            raise InvalidSpec("tau_mean must be > 0 and tau_step >= 0")
        if self.iterations < 0 or self.rollouts < 1 or self.suite_size < 1:
            raise InvalidSpec("iterations >= 0, rollouts >= 1 and suite_size >= 1 required")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidSpec("optimizer must be 'adam' or 'sgd'")
        return self


def toy_suite(config: TrainerConfig) -> list[list[Job]]:
    """The frozen training/evaluation workloads: ``suite_size`` batch workloads."""
    return [generate(WorkloadSpec(n_jobs=config.n_jobs, size_class=config.size_class,
                                  seed=config.suite_seed + i))
            for i in range(config.suite_size)]


def toy_cluster(config: TrainerConfig) -> Cluster:
    return ClusterConfig(n_executors=config.n_executors, seed=config.cluster_seed).build()


def make_critic(seed: int = 0) -> DenseNet:
    return DenseNet([CRITIC_DIM, 32, 16, 1], np.random.default_rng(seed + 7919), name="critic")


def sample_tau(rng: np.random.Generator, tau_mean: float) -> int:
    return max(1, int(math.ceil(rng.exponential(tau_mean))))


def run_episode(policy: GNNPolicy, workload: Sequence[Job], cluster: Cluster, tau: Optional[int],
                seed: int = 0) -> EpisodeTrace:
    """One rollout truncated after ``tau`` decisions (``None`` runs to completion)."""
    if tau is not None and tau < 1:
        raise InvalidSpec("tau must be >= 1")
    cfg = SimConfig(mode="batch", seed=seed, max_decisions=tau)
    return run(workload, cluster, policy, cfg).trace


@dataclass
class UpdateStats:
    actor_loss: float
    critic_loss: float
    mean_return: float
    n_steps: int


def _check_finite(grads, what: str) -> None:
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"{what} gradient {i} has {int(np.sum(~np.isfinite(g)))} non-finite entries")


class Trainer:
    """Holds the actor, critic and optimiser state across iterations."""

    def __init__(self, config: TrainerConfig, policy: Optional[GNNPolicy] = None,
                 critic: Optional[DenseNet] = None):
        self.config = config.validate()
        self.policy = policy or GNNPolicy(seed=config.seed)
        self.critic = critic or make_critic(config.seed)
        self.policy.keep_cache = True
        if config.optimizer == "adam":
            self._actor_opt = Adam(self.policy.params, config.learning_rate)
            self._critic_opt = Adam(self.critic.params, config.learning_rate)

    def _step(self, opt_name: str, params, grads, ascent: bool) -> None:
        if self.config.optimizer == "adam":
            getattr(self, opt_name).step(grads, ascent=ascent)
        else:
            sgd_step(params, grads, self.config.learning_rate, ascent=ascent)

    def value(self, critic_raw: np.ndarray) -> tuple[np.ndarray, object]:
        x = self.policy.norms["critic"](np.atleast_2d(critic_raw))
        v, tape = self.critic.forward(x)
        return v[:, 0], tape

    def update(self, traces: Sequence[EpisodeTrace]) -> UpdateStats:
        traces = [t for t in traces if t.steps]
        if not traces:
            raise InvalidSpec("update needs at least one nonempty trace")
        cfg = self.config
        scale = cfg.reward_scale

        states, next_states, rewards, nonterminal = [], [], [], []
        for tr in traces:
            obs = [s.obs.critic for s in tr.steps]
            states.extend(obs)
            if tr.truncated and tr.final_obs is not None:
                nxt, last_live = obs[1:] + [tr.final_obs.critic], 1.0
            else:
                nxt, last_live = obs[1:] + [obs[-1]], 0.0
            next_states.extend(nxt)
            rewards.extend(s.reward * scale for s in tr.steps)
            nonterminal.extend([1.0] * (len(obs) - 1) + [last_live])
        S = np.array(states)
        rewards = np.array(rewards)
        nonterminal = np.array(nonterminal)
        n = len(rewards)

        if not np.all(np.isfinite(rewards)):
            raise NonFiniteGradient("non-finite reward in trace")
        v_next, _ = self.value(np.array(next_states))
        targets = rewards + cfg.gamma * nonterminal * v_next
        v, tape = self.value(S)
        adv = targets - v
        critic_loss = float(np.mean((v - targets) ** 2))
        critic_grads, _ = self.critic.backward(tape, (2.0 / n) * (v - targets)[:, None])

        actor_grads = [np.zeros_like(p) for p in self.policy.params]
        actor_obj = 0.0
        k = 0
        for tr in traces:
            for s in tr.steps:
                cache = s.cache
                if cache is None:
                    q, cache = self.policy.forward(s.obs)
                else:
                    q = self._cached_logits(cache)
                p = softmax(q)
                logp = np.log(np.maximum(p, 1e-300))
                ent = -float(np.sum(p * logp))
                onehot = np.zeros_like(p)
                onehot[s.action] = 1.0
                a = adv[k]
                # d/dq [A log p_a + beta H]
                dq = a * (onehot - p) - cfg.entropy_coef * p * (logp + ent)
                actor_obj += a * logp[s.action] + cfg.entropy_coef * ent
                for acc, g in zip(actor_grads, self.policy.backward(cache, dq / n)):
                    acc += g
                s.cache = None
                k += 1
        _check_finite(actor_grads, "actor")
        _check_finite(critic_grads, "critic")
        self._step("_actor_opt", self.policy.params, actor_grads, ascent=True)
        self._step("_critic_opt", self.critic.params, critic_grads, ascent=False)
        mean_return = float(np.mean([tr.total_return for tr in traces]))
        return UpdateStats(-actor_obj / n, critic_loss, mean_return, n)

    @staticmethod
    def _cached_logits(cache) -> np.ndarray:
        tape = cache[2]
        z = tape.pre[-1]
        return z[:, 0]

    def warmup(self, suite, cluster, rng) -> None:
        """Seed the feature normalisers from a few untrained rollouts."""
        if self.config.warmup_episodes <= 0:
            return
        self.policy.collect_stats = True
        keep = self.policy.keep_cache
        self.policy.keep_cache = False
        for _ in range(self.config.warmup_episodes):
            wl = suite[int(rng.integers(len(suite)))]
            run_episode(self.policy, wl, cluster, None, seed=int(rng.integers(2 ** 31)))
        self.policy.commit_stats()
        self.policy.keep_cache = keep
        self.policy.collect_stats = False

    def train(self, suite=None, cluster=None, callback: Optional[Callable[[int, UpdateStats], None]] = None
              ) -> list[dict]:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        suite = suite if suite is not None else toy_suite(cfg)
        cluster = cluster if cluster is not None else toy_cluster(cfg)
        if cfg.iterations > 0:
            self.warmup(suite, cluster, rng)
        tau_mean = cfg.tau_mean
        curve = []
        for it in range(1, cfg.iterations + 1):
            tau = sample_tau(rng, tau_mean)
            self.policy.collect_stats = True
            traces = []
            for _ in range(cfg.rollouts):
                wl = suite[int(rng.integers(len(suite)))]
                traces.append(run_episode(self.policy, wl, cluster, tau, seed=int(rng.integers(2 ** 31))))
            self.policy.collect_stats = False
            stats = self.update(traces)
            self.policy.commit_stats()
            tau_mean += cfg.tau_step
            row = {"iteration": it, "actor_loss": stats.actor_loss, "critic_loss": stats.critic_loss,
                   "mean_return": stats.mean_return}
            curve.append(row)
            if callback is not None:
                callback(it, stats)
        return curve


def curve_to_csv(curve: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for row in curve:
        w.writerow([row["iteration"]] + [repr(float(row[c])) for c in CURVE_COLUMNS[1:]])
    return buf.getvalue()


def train(config: TrainerConfig, out_dir=None, callback=None) -> tuple[Trainer, list[dict]]:
    """Train from scratch; with ``out_dir`` writes ``curve.csv`` and ``checkpoint.json``."""
    trainer = Trainer(config)
    curve = trainer.train(callback=callback)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "curve.csv", curve_to_csv(curve))
        trainer.policy.save(out / "checkpoint.json", extra={"trainer": asdict(config)}, critic=trainer.critic)
    return trainer, curve


def evaluate(policy, suite: Sequence[Sequence[Job]], cluster: Cluster, seeds: Sequence[int] = (0,)) -> float:
    """Mean batch makespan of ``policy`` over ``suite`` x ``seeds``."""
    vals = []
    for wl in suite:
        for s in seeds:
            vals.append(run(wl, cluster, policy, SimConfig(mode="batch", seed=s)).metrics.makespan)
    return float(np.mean(vals))
