"""Poisoning attacks and in-group defenses.

Attacks: label flipping (data poisoning) and byzantine zero / random / flip
(model poisoning).  Defenses: m-Krum, a leave-one-out 3-sigma anomaly filter,
their combination ("secure"), and an oracle "ideal" defense.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

ATTACKS = ("none", "label_flip", "byz_zero", "byz_random", "byz_flip")
BYZANTINE = ("byz_zero", "byz_random", "byz_flip")
DEFENSES = ("none", "mkrum", "anomaly", "secure", "ideal")


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "none"
    malicious_fraction: float = 0.0
    activation: str = "after_grouping"
    byz_random_sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ATTACKS:
            raise ValueError(f"unknown attack {self.kind!r}")
        if not 0.0 <= self.malicious_fraction <= 0.5:
            raise ValueError("malicious_fraction must be in [0, 0.5]")
        if self.activation not in ("before_grouping", "after_grouping"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.byz_random_sigma > 0:
            raise ValueError("byz_random_sigma must be > 0")

    def n_malicious(self, M: int) -> int:
        return math.floor(self.malicious_fraction * M + 1e-9)


@dataclass(frozen=True)
class DefenseConfig:
    """``f`` and ``m`` of None resolve per round to ``floor(0.3 n)`` and ``n - f``."""

    kind: str = "none"
    m: int | None = None
    f: int | None = None

    def __post_init__(self):
        if self.kind not in DEFENSES:
            raise ValueError(f"unknown defense {self.kind!r}")
        if self.m is not None and self.m < 1:
            raise ValueError("m must be >= 1")
        if self.f is not None and self.f < 0:
            raise ValueError("f must be >= 0")

    def resolve(self, n: int) -> tuple[int, int]:
        f = math.floor(0.3 * n) if self.f is None else self.f
        m = n - f if self.m is None else self.m
        return f, max(1, min(m, n))


def choose_malicious(M: int, attack: AttackConfig, rng: np.random.Generator) -> list[int]:
    k = attack.n_malicious(M)
    if k == 0:
        return []
    return sorted(int(i) for i in rng.choice(M, size=k, replace=False))


# -- attacks -----------------------------------------------------------------

def attack_label_flip(dataset, num_classes: int | None = None):
    """Return a copy of ``dataset`` with every label ``y`` mapped to ``C-1-y``."""
    k = dataset.num_classes if num_classes is None else num_classes
    return replace(dataset, labels=(k - 1) - np.asarray(dataset.labels))


def attack_byzantine(update, kind: str, w_g=None, w_l=None, rng=None, sigma: float = 1.0):
    """Model a byzantine client would report in place of its honest ``update``.

    zero: all zeros.  random: i.i.d. N(0, sigma^2).  flip: ``w_g + (w_g - w_l)``.
    """
    update = np.asarray(update, dtype=np.float64)
    if kind == "byz_zero":
        return np.zeros_like(update)
    if kind == "byz_random":
        if rng is None:
            raise ValueError("byz_random needs an rng stream")
        return rng.normal(0.0, sigma, size=update.shape)
    if kind == "byz_flip":
        w_g = np.asarray(w_g, dtype=np.float64)
        w_l = np.asarray(w_l, dtype=np.float64)
        if w_g.shape != w_l.shape or w_g.shape != update.shape:
            raise ValueError(f"shape mismatch: w_g {w_g.shape}, w_l {w_l.shape}, update {update.shape}")
        return w_g + (w_g - w_l)
    raise ValueError(f"{kind!r} is not a byzantine attack")


# -- defenses ----------------------------------------------------------------

def _stack(deltas) -> np.ndarray:
    return np.atleast_2d(np.asarray([np.asarray(d, dtype=np.float64) for d in deltas]))


def krum_scores(deltas, f: int) -> np.ndarray:
    x = _stack(deltas)
    n = len(x)
    k = n - f - 2
    if k < 1:
        raise ValueError(f"insufficient participants for m-Krum: n={n}, f={f} needs n >= f+3")
    diff = x[:, None, :] - x[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    return np.sort(d2, axis=1)[:, :k].sum(axis=1)


def mkrum(deltas, f: int, m: int) -> list[int]:
    """Indices of the ``m`` deltas with the smallest Krum scores (ties: lower index)."""
    n = len(deltas)
    if m > n:
        raise ValueError(f"m={m} exceeds the number of deltas {n}")
    scores = krum_scores(deltas, f)
    order = np.lexsort((np.arange(n), scores))
    return sorted(int(i) for i in order[:m])


def anomaly_scores(deltas) -> np.ndarray:
    """Leave-one-out l2 distance of each delta to the coordinate median of the others."""
    x = _stack(deltas)
    n = len(x)
    out = np.empty(n)
    for i in range(n):
        others = np.delete(x, i, axis=0)
        out[i] = np.linalg.norm(x[i] - np.median(others, axis=0))
    return out


def anomaly_filter(deltas) -> list[int]:
    """Kept indices under the 3-sigma rule; pass-through below three deltas."""
    n = len(deltas)
    if n < 3:
        return list(range(n))
    scores = anomaly_scores(deltas)
    kept = []
    for i in range(n):
        others = np.delete(scores, i)
        threshold = others.mean() + 3.0 * others.std()
        # relative slack keeps float noise on equal scores from flagging
        if scores[i] <= threshold + 1e-12 * max(1.0, abs(threshold)):
            kept.append(i)
    return kept


@dataclass
class FilterOutcome:
    kept: list[int]
    anomaly_removed: int = 0
    mkrum_removed: int = 0
    fallback: bool = False
    notes: list[str] = field(default_factory=list)


def secure_aggregate(deltas, defense: DefenseConfig, malicious_mask=None) -> FilterOutcome:
    """Indices of ``deltas`` that survive ``defense``; feeds the mean aggregator."""
    n = len(deltas)
    everyone = list(range(n))
    kind = defense.kind
    if kind == "none" or n == 0:
        return FilterOutcome(everyone)
    if kind == "ideal":
        if malicious_mask is None:
            raise ValueError("ideal defense needs the malicious mask")
        kept = [i for i in everyone if not malicious_mask[i]]
        return FilterOutcome(kept, mkrum_removed=0, anomaly_removed=n - len(kept))
    if kind == "anomaly":
        kept = anomaly_filter(deltas)
        return FilterOutcome(kept, anomaly_removed=n - len(kept))

    def run_mkrum(idx):
        f, m = defense.resolve(len(idx))
        if len(idx) < f + 3:
            return None
        sel = mkrum([deltas[i] for i in idx], f, min(m, len(idx)))
        return [idx[j] for j in sel]

    if kind == "mkrum":
        kept = run_mkrum(everyone)
        if kept is None:
            return FilterOutcome(everyone, notes=["mkrum skipped: too few participants"])
        return FilterOutcome(kept, mkrum_removed=n - len(kept))

    # secure: anomaly layer, then m-Krum on survivors
    survivors = anomaly_filter(deltas)
    kept = run_mkrum(survivors)
    if kept is not None:
        return FilterOutcome(kept, anomaly_removed=n - len(survivors),
                             mkrum_removed=len(survivors) - len(kept))
    kept = run_mkrum(everyone)
    if kept is None:
        return FilterOutcome(survivors, anomaly_removed=n - len(survivors), fallback=True,
                             notes=["mkrum skipped: too few participants"])
    return FilterOutcome(kept, mkrum_removed=n - len(kept), fallback=True,
                         notes=["anomaly survivors below f+3; mkrum on all deltas"])


# -- metrics -----------------------------------------------------------------

def attack_impact(acc_baseline: float, acc_attacked: float) -> float:
    """Signed accuracy drop in percentage points."""
    return 100.0 * (acc_baseline - acc_attacked)


def ideal_delta(acc_ideal: float, acc_defended: float) -> float:
    return 100.0 * (acc_ideal - acc_defended)
