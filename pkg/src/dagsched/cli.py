"""``dagsched`` command line: generate, simulate, train, compare.

Every command is deterministic for fixed seeds and writes its outputs
atomically.  Decision timings are wall-clock and therefore go to a separate
``timing.csv`` next to the deterministic tables.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import fields
from pathlib import Path
from typing import Optional, Sequence

from . import metrics
from .allocator import ScheduleRecord
from .baselines import BASELINES
from .errors import SchedulingError
from .gnn import GNNPolicy
from .simulator import SimConfig, run
from .trainer import TrainerConfig, train
from .workload import (ClusterConfig, WorkloadSpec, atomic_write_text, generate, load, load_cluster_config,
                       save)

POLICIES = tuple(BASELINES) + ("lachesis",)

DEFAULTS = {
    "n_jobs": 10, "shape": None, "size_class": None, "mode": "batch", "seed": 0, "seeds": 1,
    "executors": 50, "cluster_config": None, "workload": None, "policy": "fifo",
    "cpeft": "recompute", "frontier": "assigned", "greedy": False, "checkpoint": None,
    "policies": None, "jobs": None,
}


def _merge(args: argparse.Namespace) -> dict:
    """Flags override the --config file, which overrides built-in defaults."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            cfg.update(json.load(fh))
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "func", "command"):
            cfg[k] = v
    return cfg


def make_policy(name: str, cfg: dict):
    if name == "lachesis":
        pol = GNNPolicy(seed=cfg["seed"], greedy=bool(cfg["greedy"]))
        if cfg.get("checkpoint"):
            pol.load(cfg["checkpoint"])
        return pol
    return BASELINES[name]()


def _cluster(cfg: dict, seed: int):
    if cfg.get("cluster_config"):
        return load_cluster_config(cfg["cluster_config"]).build()
    return ClusterConfig(n_executors=int(cfg["executors"]), seed=seed).build()


def _workload(cfg: dict, seed: int, n_jobs: Optional[int] = None):
    if cfg.get("workload"):
        return load(cfg["workload"])
    spec = WorkloadSpec(n_jobs=int(n_jobs or cfg["n_jobs"]), shape_id=cfg.get("shape"),
                        size_class=cfg.get("size_class"), mode=cfg["mode"], seed=seed)
    return generate(spec.validate())


def _seeds(cfg: dict) -> list[int]:
    n = int(cfg["seeds"])
    if n < 1:
        raise argparse.ArgumentTypeError("--seeds must be >= 1")
    return [int(cfg["seed"]) + i for i in range(n)]


def schedule_to_csv(schedule: ScheduleRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["job_id", "node_id", "executor", "ast", "aft", "is_duplicate"])
    rows = sorted(schedule.all_placements(), key=lambda p: (p.executor, p.ast, p.job_id, p.node_id))
    for p in rows:
        w.writerow([p.job_id, p.node_id, p.executor, repr(float(p.ast)), repr(float(p.aft)), int(p.is_duplicate)])
    return buf.getvalue()


def _run_one(policy_name: str, cfg: dict, seed: int, n_jobs: Optional[int] = None):
    wl = _workload(cfg, seed, n_jobs)
    cluster = _cluster(cfg, seed)
    pol = make_policy(policy_name, cfg)
    sim = SimConfig(mode=cfg["mode"], cpeft_mode=cfg["cpeft"], frontier=cfg["frontier"], seed=seed)
    res = run(wl, cluster, pol, sim)
    rep = metrics.report(policy_name, seed, res.jobs, cluster, res.schedule, res.metrics.latencies)
    return res, rep


def _write_reports(out: Path, reports, name: str) -> None:
    atomic_write_text(out / f"{name}.csv", metrics.reports_to_csv(reports))
    atomic_write_text(out / "timing.csv", metrics.reports_to_csv(reports, metrics.MetricsReport.TIMING))
    rows = metrics.aggregate(reports)
    atomic_write_text(out / "summary.csv", metrics.aggregate_to_csv(rows))
    atomic_write_text(out / "summary.txt", metrics.summary_text(rows))


def cmd_generate(cfg: dict) -> int:
    spec = WorkloadSpec(n_jobs=int(cfg["n_jobs"]), shape_id=cfg.get("shape"), size_class=cfg.get("size_class"),
                        mode=cfg["mode"], seed=int(cfg["seed"])).validate()
    out = Path(cfg["out"])
    if out.suffix != ".json":
        out = out / "workload.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save(generate(spec), out)
    print(f"wrote {out}")
    return 0


def cmd_simulate(cfg: dict) -> int:
    out = Path(cfg["out"])
    (out / "schedules").mkdir(parents=True, exist_ok=True)
    reports = []
    for seed in _seeds(cfg):
        res, rep = _run_one(cfg["policy"], cfg, seed)
        atomic_write_text(out / "schedules" / f"{cfg['policy']}_seed{seed}.csv", schedule_to_csv(res.schedule))
        reports.append(rep)
    _write_reports(out, reports, "report")
    sys.stdout.write(metrics.summary_text(metrics.aggregate(reports)))
    return 0


def cmd_train(cfg: dict, args: argparse.Namespace) -> int:
    tc = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
        known = {f.name for f in fields(TrainerConfig)}
        tc.update({k: v for k, v in doc.items() if k in known})
    for flag, key in (("iterations", "iterations"), ("lr", "learning_rate"), ("rollouts", "rollouts"),
                      ("tau_mean", "tau_mean"), ("tau_step", "tau_step"), ("seed", "seed"),
                      ("optimizer", "optimizer")):
        v = getattr(args, flag, None)
        if v is not None:
            tc[key] = v
    config = TrainerConfig(**tc)

    def progress(it, stats):
        if it % 50 == 0 or it == config.iterations:
            print(f"iter {it}: return {stats.mean_return:.3f} critic {stats.critic_loss:.4g}", flush=True)

    _, curve = train(config, out_dir=cfg["out"], callback=progress)
    print(f"wrote {Path(cfg['out']) / 'curve.csv'} and checkpoint.json ({len(curve)} iterations)")
    return 0


def cmd_compare(cfg: dict) -> int:
    policies = list(cfg["policies"] or [])
    if len(policies) < 2:
        raise argparse.ArgumentTypeError("compare needs at least two policies")
    job_counts = [int(j) for j in (cfg["jobs"] or [cfg["n_jobs"]])]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for n_jobs in job_counts:
        for seed in _seeds(cfg):
            for name in policies:
                reports.append(_run_one(name, cfg, seed, n_jobs)[1])
    reports.sort(key=lambda r: (r.policy, r.n_jobs, r.seed))
    _write_reports(out, reports, "compare")
    sys.stdout.write(metrics.summary_text(metrics.aggregate(reports)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dagsched", description="DAG job scheduling simulator and learned scheduler")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="JSON file of option defaults; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=out_required, help="output directory (or .json file for generate)")

    def wl_flags(sp):
        sp.add_argument("--n-jobs", dest="n_jobs", type=int)
        sp.add_argument("--shape", type=int)
        sp.add_argument("--size-class", dest="size_class", type=int)
        sp.add_argument("--mode", choices=("batch", "continuous"))

    def sim_flags(sp):
        sp.add_argument("--workload", help="workload JSON file (otherwise generated per seed)")
        sp.add_argument("--executors", type=int)
        sp.add_argument("--cluster-config", dest="cluster_config")
        sp.add_argument("--cpeft", choices=("recompute", "literal"))
        sp.add_argument("--frontier", choices=("assigned", "finished"))
        sp.add_argument("--greedy", action="store_true", default=None)
        sp.add_argument("--checkpoint")
        sp.add_argument("--seeds", type=int, help="number of consecutive seeds starting at --seed")

    g = sub.add_parser("generate", help="write a synthetic workload file")
    common(g)
    wl_flags(g)

    s = sub.add_parser("simulate", help="run one policy and report metrics")
    common(s)
    wl_flags(s)
    sim_flags(s)
    s.add_argument("--policy", choices=POLICIES)

    t = sub.add_parser("train", help="train the learned policy on the toy suite")
    common(t)
    t.add_argument("--iterations", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--rollouts", type=int)
    t.add_argument("--tau-mean", dest="tau_mean", type=float)
    t.add_argument("--tau-step", dest="tau_step", type=float)
    t.add_argument("--optimizer", choices=("adam", "sgd"))

    c = sub.add_parser("compare", help="run several policies over the same workloads")
    common(c)
    wl_flags(c)
    sim_flags(c)
    c.add_argument("--policies", nargs="+", choices=POLICIES)
    c.add_argument("--jobs", nargs="+", type=int, help="job counts to sweep (default: --n-jobs)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = _merge(args)
    try:
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "simulate":
            if cfg["policy"] not in POLICIES:
                parser.error(f"unknown policy {cfg['policy']!r}")
            return cmd_simulate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args)
        return cmd_compare(cfg)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))
    except (SchedulingError, OSError, ValueError) as exc:
        print(f"dagsched: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
