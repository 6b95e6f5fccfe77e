"""Gaussian mechanism for proxy-model updates.

Per-sample clipping, noisy averaging, closed-form noise calibration from the
privacy budget, and client/data subsampling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class PrivacyParams:
    """Privacy budget and the mechanism knobs that spend it.

    ``sigma_g`` is derived from the other fields by :func:`calibrate_sigma`
    unless constructed explicitly (e.g. for noise sweeps).
    """

    epsilon: float = 15.0
    delta: float = 0.005
    clip_C: float = 1.0
    s: float = 1.0
    l: float = 1.0
    K: int = 1
    T: int = 50
    M_prime: int = 1
    calib_const: float = 1.0
    sigma_g: float | None = None

    def __post_init__(self):
        if not self.clip_C > 0:
            raise ValueError("clip_C must be > 0")
        if not 0 < self.s <= 1 or not 0 < self.l <= 1:
            raise ValueError("subsampling ratios s and l must be in (0, 1]")
        if self.K < 1 or self.T < 1 or self.M_prime < 1:
            raise ValueError("K, T and M_prime must be >= 1")
        if self.sigma_g is None:
            sigma = calibrate_sigma(self.epsilon, self.delta, self.s, self.l, self.T,
                                    self.K, self.M_prime, self.calib_const)
            object.__setattr__(self, "sigma_g", sigma)
        elif self.sigma_g < 0:
            raise ValueError("sigma_g must be >= 0")

    def with_sigma(self, sigma_g: float) -> "PrivacyParams":
        return replace(self, sigma_g=float(sigma_g))


def calibrate_sigma(eps: float, delta: float, s: float, l: float, T: int, K: int,
                    M_prime: int = 1, calib_const: float = 1.0) -> float:
    """Noise multiplier meeting an (eps, delta) budget.

    sigma_g = c * s * sqrt(l T K ln(2 T l / delta) ln(2 / delta)) / (eps sqrt(M'))
    """
    for name, v in (("eps", eps), ("s", s), ("l", l), ("T", T), ("K", K),
                    ("M_prime", M_prime), ("calib_const", calib_const)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if 2 * T * l / delta <= 1:
        raise ValueError("the bound needs 2 T l / delta > 1")
    inner = l * T * K * math.log(2 * T * l / delta) * math.log(2 / delta)
    return calib_const * s * math.sqrt(inner) / (eps * math.sqrt(M_prime))


def clip_gradient(g, C: float) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if not C > 0:
        raise ValueError("clipping bound must be > 0")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient contains non-finite entries")
    norm = float(np.linalg.norm(g))
    return g / max(1.0, norm / C)


def clip_rows(grads, C: float) -> np.ndarray:
    """Row-wise :func:`clip_gradient` for an (n x p) per-sample matrix."""
    grads = np.atleast_2d(np.asarray(grads, dtype=np.float64))
    if not C > 0:
        raise ValueError("clipping bound must be > 0")
    if not np.all(np.isfinite(grads)):
        raise ValueError("gradient contains non-finite entries")
    norms = np.linalg.norm(grads, axis=1)
    return grads / np.maximum(1.0, norms / C)[:, None]


def noisy_mean(per_sample_grads, C: float, sigma_g: float, sR: float,
               rng: np.random.Generator) -> np.ndarray:
    """Sum of pre-clipped gradients over ``sR`` plus Gaussian noise.

    Noise std per coordinate is ``(2C / sR) * sigma_g``.  With ``sigma_g = 0``
    no draw is made from ``rng``.
    """
    grads = np.atleast_2d(np.asarray(per_sample_grads, dtype=np.float64))
    if grads.shape[0] == 0:
        raise ValueError("noisy_mean of an empty gradient list")
    if not sR > 0:
        raise ValueError("sR must be > 0")
    total = grads.sum(axis=0) / sR
    if sigma_g == 0:
        return total
    return total + (2.0 * C / sR) * rng.normal(0.0, sigma_g, size=total.shape)


def subsample_clients(group, l: float, rng: np.random.Generator) -> list[int]:
    """Uniform subset of ``floor(l * |group|)`` members (at least one), ascending."""
    members = sorted(int(c) for c in group)
    if not members:
        raise ValueError("cannot subsample an empty group")
    if not 0 < l <= 1:
        raise ValueError("l must be in (0, 1]")
    k = max(1, math.floor(l * len(members)))
    if k == len(members):
        return members
    picked = rng.choice(len(members), size=k, replace=False)
    return sorted(members[i] for i in picked)


def batch_size(n_train: int, s: float) -> int:
    return max(1, math.floor(s * n_train))


def subsample_data(dataset, s: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform training-index batch of size ``floor(s * R_train)`` (at least one)."""
    train = np.asarray(dataset.train_idx)
    if len(train) == 0:
        raise ValueError("client has no training samples")
    if not 0 < s <= 1:
        raise ValueError("s must be in (0, 1]")
    k = batch_size(len(train), s)
    if k == len(train):
        return np.sort(train)
    return np.sort(train[rng.choice(len(train), size=k, replace=False)])
