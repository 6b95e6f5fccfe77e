"""Experiment configuration: strict YAML schema, overrides and resolution."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .. import grouping
from ..data import PartitionSpec
from ..model import LossWeights
from ..privacy import PrivacyParams
from ..robustness import AttackConfig, DefenseConfig

BASELINES = ("p4", "fedavg", "local", "random_grouping")


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` names the offending key path."""


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    num_classes: int = 4
    dim: int = 32
    separation: float = 1.5
    n_per_class: int = 600
    path: str | None = None


@dataclass(frozen=True)
class PrivacyConfig:
    epsilon: float = 15.0
    delta: Any = "auto"
    clip_c: float = 0.3
    s: float = 0.1
    l: float = 1.0
    K: int = 1
    calib_const: float = 1.0
    m_prime: int = 1
    sigma_g: float | None = None


@dataclass(frozen=True)
class TrainConfig:
    eta0: float = 0.1
    eta_g: float = 1.0
    agg_period: int = 5


@dataclass(frozen=True)
class GroupingConfig:
    V: int = 4
    H: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = DatasetConfig()
    partition: PartitionSpec = PartitionSpec()
    privacy: PrivacyConfig = PrivacyConfig()
    loss: LossWeights = LossWeights()
    train: TrainConfig = TrainConfig()
    grouping: GroupingConfig = GroupingConfig()
    attack: AttackConfig = AttackConfig()
    defense: DefenseConfig = DefenseConfig()
    rounds: int = 50
    baseline: str = "p4"
    seeds: list = field(default_factory=lambda: [0])
    out: str = "results"

    # -- derived quantities -------------------------------------------------

    @property
    def delta(self) -> float:
        if self.privacy.delta == "auto":
            return 1.0 / self.partition.R
        return float(self.privacy.delta)

    def privacy_params(self) -> PrivacyParams:
        p = self.privacy
        return PrivacyParams(epsilon=p.epsilon, delta=self.delta, clip_C=p.clip_c, s=p.s, l=p.l,
                             K=p.K, T=self.rounds, M_prime=p.m_prime,
                             calib_const=p.calib_const, sigma_g=p.sigma_g)

    @property
    def num_clients(self) -> int:
        spec = self.partition
        if spec.mode == "shard":
            L = spec.L or self.dataset.num_classes
            return L * spec.P // spec.N
        return spec.M

    @property
    def H(self) -> int:
        if self.grouping.H is not None:
            return self.grouping.H
        return grouping.default_H(self.num_clients)

    def resolved(self) -> dict:
        """Plain dict of every setting plus the derived values used by the run."""
        d = to_dict(self)
        priv = self.privacy_params()
        d["privacy"]["delta"] = self.delta
        d["privacy"]["sigma_g"] = priv.sigma_g
        d["grouping"]["H"] = self.H
        d["derived"] = {
            "eta_l": self.train.eta0 / (self.privacy.s * self.privacy.K),
            "n_malicious": self.attack.n_malicious(self.num_clients),
            "num_clients": self.num_clients,
        }
        return d


_SECTIONS = {
    "dataset": DatasetConfig, "partition": PartitionSpec, "privacy": PrivacyConfig,
    "loss": LossWeights, "train": TrainConfig, "grouping": GroupingConfig,
    "attack": AttackConfig, "defense": DefenseConfig,
}


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _coerce(value, default, path):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not (isinstance(value, int) or
                                           (isinstance(value, float) and value.is_integer())):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    return value


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key")
    defaults = cls()
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(value, getattr(defaults, name), f"{path}.{name}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def from_dict(data: dict | None) -> ExperimentConfig:
    data = dict(data or {})
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    kwargs = {}
    for name, value in data.items():
        if name in _SECTIONS:
            kwargs[name] = _build(_SECTIONS[name], value or {}, name)
        elif name == "seeds":
            seeds = [value] if isinstance(value, int) else value
            if not isinstance(seeds, list) or not seeds or not all(
                    isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds):
                raise ConfigError("seeds: expected a non-empty list of non-negative integers")
            kwargs[name] = list(seeds)
        else:
            kwargs[name] = _coerce(value, getattr(ExperimentConfig(), name), name)
    cfg = ExperimentConfig(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    if cfg.baseline not in BASELINES:
        raise ConfigError(f"baseline: must be one of {', '.join(BASELINES)}")
    if cfg.rounds < 1:
        raise ConfigError("rounds: must be >= 1")
    if cfg.dataset.kind not in ("synthetic", "file"):
        raise ConfigError("dataset.kind: must be 'synthetic' or 'file'")
    if cfg.dataset.kind == "file" and not cfg.dataset.path:
        raise ConfigError("dataset.path: required when dataset.kind is 'file'")
    if cfg.privacy.delta != "auto" and not (
            isinstance(cfg.privacy.delta, (int, float)) and 0 < cfg.privacy.delta < 1):
        raise ConfigError("privacy.delta: must be 'auto' or a number in (0, 1)")
    M = cfg.num_clients
    if cfg.grouping.V < 1 or cfg.grouping.V > M:
        raise ConfigError(f"grouping.V: must be in [1, {M}]")
    if cfg.grouping.H is not None and not 1 <= cfg.grouping.H <= max(1, M - 1):
        raise ConfigError(f"grouping.H: must be in [1, {max(1, M - 1)}]")
    if cfg.train.eta0 < 0 or cfg.train.eta_g < 0:
        raise ConfigError("train: step sizes must be non-negative")
    try:
        cfg.privacy_params()
    except ValueError as exc:
        raise ConfigError(f"privacy: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return from_dict(data)


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``section.key=value`` strings (values parsed as YAML scalars)."""
    data = to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"{key}: unknown key")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"{key}: unknown key")
        node[parts[-1]] = value
    return from_dict(data)
