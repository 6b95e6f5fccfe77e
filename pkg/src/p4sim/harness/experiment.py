"""End-to-end runs: data, phase 1 grouping, phase 2 co-training, metrics."""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .. import cotrain, data, grouping
from .. import model as mdl
from .. import robustness as rob
from ..rng import stream
from .config import ExperimentConfig


@dataclass
class RunResult:
    seed: int
    baseline: str
    mean_acc_theta: float
    std_acc_theta: float
    mean_acc_phi: float
    std_acc_phi: float
    acc_theta_series: list[float]
    acc_phi_series: list[float]
    filtered_series: list[int]
    groups: list[list[int]] | None
    malicious_ids: list[int]
    client_acc: dict
    separation: dict | None = None
    attack_impact: float | None = None
    ideal_delta: float | None = None
    reference: dict = field(default_factory=dict)
    privacy_ledger: dict = field(default_factory=dict)
    round_reports: list | None = None
    wall_clock: dict = field(default_factory=dict)
    error: str | None = None

    @classmethod
    def failed(cls, seed: int, baseline: str, message: str) -> "RunResult":
        return cls(seed, baseline, 0.0, 0.0, 0.0, 0.0, [], [], [], None, [], {}, error=message)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "seed", "baseline", "mean_acc_theta", "std_acc_theta", "mean_acc_phi",
            "std_acc_phi", "acc_theta_series", "acc_phi_series", "filtered_series", "groups",
            "malicious_ids", "separation", "attack_impact", "ideal_delta", "reference",
            "privacy_ledger", "round_reports", "error")}
        d["client_acc"] = {str(c): {"theta": a[0], "phi": a[1]}
                           for c, a in sorted(self.client_acc.items())}
        return d


def threads() -> int:
    try:
        return max(1, int(os.environ.get("P4SIM_THREADS", "1")))
    except ValueError:
        return 1


# -- per-seed pieces ---------------------------------------------------------

def build_clients(cfg: ExperimentConfig, seed: int):
    ds = cfg.dataset
    if ds.kind == "file":
        pool = data.load_feature_file(ds.path)
    else:
        pool = data.gen_synthetic(ds.num_classes, ds.dim, ds.separation, ds.n_per_class, seed)
    spec = cfg.partition
    if spec.mode == "shard" and spec.L is None:
        spec = replace(spec, L=pool.num_classes)
    return pool, data.partition(pool, spec, seed)


def distribution_key(client: data.ClientDataset):
    if client.dominant_class is not None:
        return client.dominant_class
    return tuple(sorted(set(int(c) for c in client.labels)))


def init_states(cfg, clients, malicious, attack, w0):
    states = {}
    for i, c in enumerate(clients):
        if i in malicious and attack.kind == "label_flip":
            c = rob.attack_label_flip(c)
        theta = mdl.LinearModel(c.num_classes, c.features.shape[1], w0)
        states[i] = cotrain.ClientState(i, theta, theta, c, malicious=i in malicious)
    return states


def warmup_weights(states, params: cotrain.TrainParams, seed: int, w0, attack):
    """Weights every client reports in phase 1."""
    out = []
    for cid in sorted(states):
        s = states[cid]
        theta0 = s.theta.unflatten(w0)
        w = grouping.warmup_one_epoch(
            theta0, s.data, params.privacy, params.eta_l,
            lambda purpose, k, cid=cid: stream(seed, purpose, cid, 0, k))
        if (s.malicious and attack.kind in rob.BYZANTINE
                and attack.activation == "before_grouping"):
            w = rob.attack_byzantine(w, attack.kind, w_g=w0, w_l=w,
                                     rng=stream(seed, "byz_random", cid, -1),
                                     sigma=attack.byz_random_sigma)
        out.append(w)
    return out


def _summary(values):
    values = list(values)
    if not values:
        return 0.0, 0.0
    return float(np.mean(values)), float(np.std(values))


def run_seed(cfg: ExperimentConfig, seed: int, baseline: str | None = None,
             attack: rob.AttackConfig | None = None, defense: rob.DefenseConfig | None = None,
             record_reports: bool = True) -> RunResult:
    """One pipeline execution; ``baseline/attack/defense`` override the config."""
    baseline = baseline or cfg.baseline
    attack = cfg.attack if attack is None else attack
    defense = cfg.defense if defense is None else defense
    clock = {}
    t0 = time.perf_counter()
    pool, clients = build_clients(cfg, seed)
    M = len(clients)
    malicious = rob.choose_malicious(M, attack, stream(seed, "malicious"))
    benign = [i for i in range(M) if i not in malicious]
    n_params = pool.num_classes * pool.dim + pool.num_classes
    w0 = np.zeros(n_params)
    states = init_states(cfg, clients, set(malicious), attack, w0)
    params = cotrain.TrainParams(cfg.privacy_params(), cfg.loss, cfg.train.eta0,
                                 cfg.train.eta_g, cfg.train.agg_period)
    clock["setup"] = time.perf_counter() - t0

    assignment = None
    separation = None
    t1 = time.perf_counter()
    if baseline == "p4":
        reported = warmup_weights(states, params, seed, w0, attack)
        assignment, _ = grouping.form_groups(
            reported, cfg.grouping.V, cfg.H, stream(seed, "peer_sample"),
            stream(seed, "random_pair"))
        separation = _separation(clients, reported)
    elif baseline == "random_grouping":
        assignment = grouping.random_groups(M, cfg.grouping.V, stream(seed, "random_groups"))
    clock["phase1"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    reports = None
    if baseline == "local":
        series = [cotrain.local_baseline(states[c], cfg.rounds, params, seed) for c in range(M)]
        th = [float(np.mean([series[c][t] for c in benign])) if benign else 0.0
              for t in range(cfg.rounds)]
        ph = th
        final = {c: (series[c][-1], series[c][-1]) for c in benign}
        filtered = [0] * cfg.rounds
    else:
        if baseline == "fedavg":
            res = cotrain.fedavg_baseline(states, cfg.rounds, params, seed, benign, w0,
                                          defense, attack)
        else:
            groups = []
            for gid, members in enumerate(assignment.groups):
                for c in members:
                    states[c].group_id = gid
                groups.append(cotrain.GroupState(gid, list(members), w0.copy()))
            res = cotrain.run_phase2(states, groups, params, seed, cfg.rounds, benign,
                                     defense, attack)
        th, ph, final = res.acc_theta_series, res.acc_phi_series, res.final_client_acc
        filtered = [sum(len(r.filtered_ids) for r in rr) for rr in res.round_reports]
        if record_reports:
            reports = [[r.to_dict() for r in rr] for rr in res.round_reports]
    clock["phase2"] = time.perf_counter() - t2

    mt, st = _summary(final[c][0] for c in benign)
    mp, sp = _summary(final[c][1] for c in benign)
    ledger = {
        "sigma_g": params.privacy.sigma_g,
        "noisy_steps": {str(c): states[c].noisy_steps for c in range(M)},
        "participations": {str(c): states[c].rounds_participated for c in range(M)},
        "consistent": all(states[c].noisy_steps == params.privacy.K * states[c].rounds_participated
                          for c in range(M)),
    }
    if assignment is not None:
        sizes = sorted({len(g) for g in assignment.groups})
        ledger["remainder_group"] = len(sizes) > 1
    return RunResult(seed, baseline, mt, st, mp, sp, th, ph, filtered,
                     assignment.to_json() if assignment else None, malicious, final,
                     separation, privacy_ledger=ledger, round_reports=reports,
                     wall_clock=clock)


def _separation(clients, reported):
    by = {}
    for c, w in zip(clients, reported):
        by.setdefault(distribution_key(c), []).append(w)
    dists = [v for _, v in sorted(by.items(), key=lambda kv: str(kv[0])) if len(v) >= 2]
    if len(dists) < 2:
        return None
    return grouping.separation_report(dists).to_dict()


def run_seed_with_references(cfg: ExperimentConfig, seed: int,
                             baseline: str | None = None) -> RunResult:
    """Main run plus, under attack, the clean and ideal-defense reference runs."""
    res = run_seed(cfg, seed, baseline)
    if cfg.attack.kind == "none":
        return res
    clean = run_seed(cfg, seed, baseline, attack=replace(cfg.attack, kind="none"),
                     defense=rob.DefenseConfig("none"), record_reports=False)
    res.attack_impact = rob.attack_impact(clean.mean_acc_theta, res.mean_acc_theta)
    res.reference["clean_acc_theta"] = clean.mean_acc_theta
    if cfg.defense.kind == "ideal":
        res.ideal_delta = 0.0
        res.reference["ideal_acc_theta"] = res.mean_acc_theta
    else:
        ideal = run_seed(cfg, seed, baseline, defense=rob.DefenseConfig("ideal"),
                         record_reports=False)
        res.ideal_delta = rob.ideal_delta(ideal.mean_acc_theta, res.mean_acc_theta)
        res.reference["ideal_acc_theta"] = ideal.mean_acc_theta
    return res


def _guarded(cfg, seed, baseline):
    # a failing seed is reported, the others still run
    try:
        return run_seed_with_references(cfg, seed, baseline)
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        return RunResult.failed(seed, baseline or cfg.baseline, f"{type(exc).__name__}: {exc}")


def _run_many(cfg: ExperimentConfig, baseline: str | None) -> list[RunResult]:
    seeds = list(cfg.seeds)
    n = min(threads(), len(seeds))
    if n <= 1:
        return [_guarded(cfg, s, baseline) for s in seeds]
    with ThreadPoolExecutor(max_workers=n) as pool:
        # map() keeps seed order whatever the completion order
        return list(pool.map(lambda s: _guarded(cfg, s, baseline), seeds))


def run_experiment(cfg: ExperimentConfig) -> list[RunResult]:
    return _run_many(cfg, None)


def random_grouping_ablation(cfg: ExperimentConfig) -> list[RunResult]:
    return _run_many(cfg, "random_grouping")


def run_separation(cfg: ExperimentConfig) -> list[dict]:
    """Phase-1 diagnostic only: groups and separation per seed."""
    out = []
    for seed in cfg.seeds:
        pool, clients = build_clients(cfg, seed)
        M = len(clients)
        malicious = rob.choose_malicious(M, cfg.attack, stream(seed, "malicious"))
        w0 = np.zeros(pool.num_classes * pool.dim + pool.num_classes)
        states = init_states(cfg, clients, set(malicious), cfg.attack, w0)
        params = cotrain.TrainParams(cfg.privacy_params(), cfg.loss, cfg.train.eta0)
        reported = warmup_weights(states, params, seed, w0, cfg.attack)
        assignment, _ = grouping.form_groups(reported, cfg.grouping.V, cfg.H,
                                             stream(seed, "peer_sample"),
                                             stream(seed, "random_pair"))
        out.append({"seed": seed, "groups": assignment.to_json(),
                    "separation": _separation(clients, reported)})
    return out
