"""In-group co-training of proxy and local models, plus the two baselines.

Each round a group subsamples participants, every participant runs ``K``
steps (DP on the proxy theta, plain SGD on the local phi), reports
``theta_i - theta_global``, the aggregator filters and averages the deltas,
and the new global theta is broadcast to the participants.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import model as mdl
from . import privacy as dp
from . import robustness as rob
from .rng import stream


@dataclass
class ClientState:
    cid: int
    theta: mdl.LinearModel
    phi: mdl.LinearModel
    data: object
    group_id: int = 0
    malicious: bool = False
    noisy_steps: int = 0
    rounds_participated: int = 0

    def __post_init__(self):
        if (self.theta.num_classes, self.theta.dim) != (self.phi.num_classes, self.phi.dim):
            raise ValueError("proxy and local models must share an architecture")


@dataclass(frozen=True)
class TrainParams:
    privacy: dp.PrivacyParams
    lw: mdl.LossWeights = mdl.LossWeights()
    eta0: float = 0.5
    eta_g: float = 1.0
    agg_period: int = 5
    train_local: bool = True

    @property
    def eta_l(self) -> float:
        return self.eta0 / (self.privacy.s * self.privacy.K)


@dataclass
class GroupRoundContext:
    t: int
    participants: list[int]
    aggregator: int
    theta_global: np.ndarray
    eta_g: float
    eta_l: float


@dataclass
class GroupState:
    gid: int
    members: list[int]
    theta_global: np.ndarray


@dataclass
class GroupRoundReport:
    gid: int
    t: int
    participants: list[int]
    aggregator: int
    kept_ids: list[int]
    filtered_ids: list[int]
    defense_kind: str
    anomaly_removed: int = 0
    mkrum_removed: int = 0
    fallback: bool = False
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "group": self.gid, "round": self.t, "participants": self.participants,
            "aggregator": self.aggregator, "kept_ids": self.kept_ids,
            "filtered_ids": self.filtered_ids, "defense_kind": self.defense_kind,
            "anomaly_removed": self.anomaly_removed, "mkrum_removed": self.mkrum_removed,
            "fallback": self.fallback, "notes": list(self.notes),
        }


def rotate_aggregator(group, t: int, period: int) -> int:
    """Round-robin over sorted members, advancing every ``period`` rounds (0: fixed)."""
    members = sorted(group)
    if period <= 0:
        return members[0]
    return members[(t // period) % len(members)]


def aggregate_mean(deltas: dict, eta_g: float) -> np.ndarray:
    """``eta_g`` times the mean of ``deltas`` (summed in ascending client order)."""
    if not deltas:
        raise ValueError("cannot aggregate an empty set of deltas")
    ids = sorted(deltas)
    total = np.zeros_like(np.asarray(deltas[ids[0]], dtype=np.float64))
    for cid in ids:
        d = np.asarray(deltas[cid], dtype=np.float64)
        if d.shape != total.shape:
            raise ValueError(f"delta of client {cid} has shape {d.shape}, expected {total.shape}")
        total = total + d
    return eta_g * (total / len(ids))


def client_local_round(state: ClientState, ctx: GroupRoundContext, params: TrainParams,
                       seed: int) -> np.ndarray:
    """``K`` co-training steps from the group's theta; returns the proxy delta."""
    priv = params.privacy
    if priv.K < 1:
        raise ValueError("K must be >= 1")
    theta = state.theta.unflatten(ctx.theta_global)
    phi = state.phi
    bsz = dp.batch_size(state.data.n_train, priv.s)
    for k in range(priv.K):
        idx = dp.subsample_data(state.data, priv.s, stream(seed, "data_sample", state.cid, ctx.t, k))
        x, y = state.data.features[idx], state.data.labels[idx]
        g = dp.clip_rows(mdl.proxy_loss_grad(theta, phi, x, y, params.lw), priv.clip_C)
        g = dp.noisy_mean(g, priv.clip_C, priv.sigma_g, bsz,
                          stream(seed, "dp_noise", state.cid, ctx.t, k))
        theta = mdl.sgd_step(theta, g, ctx.eta_l)
        state.noisy_steps += 1
        if params.train_local:
            phi = mdl.sgd_step(phi, mdl.local_loss_grad(phi, theta, x, y, params.lw), ctx.eta_l)
    state.theta = theta
    state.phi = phi
    state.rounds_participated += 1
    return theta.params - ctx.theta_global


def reported_delta(state: ClientState, honest_delta, theta_prev, attack: rob.AttackConfig,
                   seed: int, t: int) -> np.ndarray:
    """Delta a client puts on the wire; byzantine clients replace their model."""
    if not (state.malicious and attack.kind in rob.BYZANTINE):
        return honest_delta
    honest_model = theta_prev + honest_delta
    bad = rob.attack_byzantine(honest_model, attack.kind, w_g=theta_prev, w_l=honest_model,
                               rng=stream(seed, "byz_random", state.cid, t),
                               sigma=attack.byz_random_sigma)
    return bad - theta_prev


def run_group_round(states: dict, group: GroupState, t: int, params: TrainParams, seed: int,
                    defense: rob.DefenseConfig = rob.DefenseConfig(),
                    attack: rob.AttackConfig = rob.AttackConfig()) -> GroupRoundReport:
    priv = params.privacy
    members = sorted(group.members)
    participants = dp.subsample_clients(
        members, priv.l, stream(seed, "client_sample", client=members[0], round=t))
    ctx = GroupRoundContext(t, participants, rotate_aggregator(members, t, params.agg_period),
                            group.theta_global, params.eta_g, params.eta_l)
    deltas = {}
    for cid in participants:
        try:
            honest = client_local_round(states[cid], ctx, params, seed)
            deltas[cid] = reported_delta(states[cid], honest, group.theta_global, attack, seed, t)
        except Exception as exc:
            raise RuntimeError(f"client {cid} failed in round {t}: {exc}") from exc
    mask = [states[c].malicious for c in participants]
    outcome = rob.secure_aggregate([deltas[c] for c in participants], defense, mask)
    kept = [participants[i] for i in outcome.kept]
    if kept:
        group.theta_global = group.theta_global + aggregate_mean(
            {c: deltas[c] for c in kept}, params.eta_g)
    for cid in participants:
        states[cid].theta = states[cid].theta.unflatten(group.theta_global)
    return GroupRoundReport(group.gid, t, participants, ctx.aggregator, kept,
                            [c for c in participants if c not in kept], defense.kind,
                            outcome.anomaly_removed, outcome.mkrum_removed, outcome.fallback,
                            outcome.notes)


def evaluate(states: dict, ids) -> dict:
    """Per-client test accuracy of theta and phi."""
    out = {}
    for cid in ids:
        s = states[cid]
        x, y = s.data.test()
        out[cid] = (mdl.accuracy(s.theta, x, y), mdl.accuracy(s.phi, x, y))
    return out


@dataclass
class Phase2Result:
    acc_theta_series: list[float]
    acc_phi_series: list[float]
    final_client_acc: dict
    round_reports: list[list[GroupRoundReport]]
    theta_trajectory: list[np.ndarray] | None = None


def run_phase2(states: dict, groups: list[GroupState], params: TrainParams, seed: int,
               rounds: int, eval_ids, defense=rob.DefenseConfig(), attack=rob.AttackConfig(),
               record_trajectory: bool = False) -> Phase2Result:
    """All groups for ``rounds`` rounds; metrics averaged over ``eval_ids``."""
    eval_ids = sorted(eval_ids)
    th_series, ph_series, reports, traj = [], [], [], []
    acc = {}
    for t in range(rounds):
        reports.append([run_group_round(states, g, t, params, seed, defense, attack)
                        for g in groups])
        if record_trajectory:
            traj.append(np.stack([g.theta_global for g in groups]))
        acc = evaluate(states, eval_ids)
        th_series.append(float(np.mean([acc[c][0] for c in eval_ids])) if eval_ids else 0.0)
        ph_series.append(float(np.mean([acc[c][1] for c in eval_ids])) if eval_ids else 0.0)
    return Phase2Result(th_series, ph_series, acc, reports, traj if record_trajectory else None)


def fedavg_baseline(states: dict, rounds: int, params: TrainParams, seed: int, eval_ids,
                    theta0, defense=rob.DefenseConfig(), attack=rob.AttackConfig(),
                    record_trajectory: bool = False) -> Phase2Result:
    """All clients in one group, no distillation, same DP mechanics."""
    fed = replace(params, lw=mdl.LossWeights(0.0, 0.0, params.lw.temperature), train_local=False)
    group = GroupState(0, sorted(states), np.array(theta0, dtype=np.float64))
    for s in states.values():
        s.group_id = 0
    res = run_phase2(states, [group], fed, seed, rounds, eval_ids, defense, attack,
                     record_trajectory)
    # a FedAvg client holds only theta
    res.acc_phi_series = list(res.acc_theta_series)
    res.final_client_acc = {c: (a[0], a[0]) for c, a in res.final_client_acc.items()}
    return res


def local_baseline(state: ClientState, rounds: int, params: TrainParams, seed: int) -> list[float]:
    """Noiseless SGD on phi alone; returns the per-round test accuracy."""
    priv = params.privacy
    lw = mdl.LossWeights(0.0, 0.0)
    phi = state.phi
    x_te, y_te = state.data.test()
    series = []
    for t in range(rounds):
        for k in range(priv.K):
            idx = dp.subsample_data(state.data, priv.s, stream(seed, "data_sample", state.cid, t, k))
            x, y = state.data.features[idx], state.data.labels[idx]
            phi = mdl.sgd_step(phi, mdl.local_loss_grad(phi, phi, x, y, lw), params.eta_l)
        series.append(mdl.accuracy(phi, x_te, y_te))
    state.phi = phi
    state.theta = phi
    return series
