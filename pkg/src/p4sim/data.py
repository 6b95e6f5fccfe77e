"""Synthetic pools, non-IID partitioners, client splits and feature files."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod

TRAIN_FRACTION = 0.8
MAGIC = b"P4FT"
FILE_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class FeatureFileError(ValueError):
    pass


class BadMagicError(FeatureFileError):
    pass


class TruncatedFileError(FeatureFileError):
    pass


class LabelRangeError(FeatureFileError):
    pass


class InsufficientPoolError(ValueError):
    pass


@dataclass(frozen=True)
class Pool:
    """Pooled labelled features from which clients are carved."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on sample count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ClientDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    train_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    test_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dominant_class: int | None = None

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_train(self) -> int:
        return len(self.train_idx)

    def train(self):
        return self.features[self.train_idx], self.labels[self.train_idx]

    def test(self):
        return self.features[self.test_idx], self.labels[self.test_idx]


@dataclass(frozen=True)
class PartitionSpec:
    """How the pool is carved into ``M`` clients.

    ``alpha`` mode: ``gamma`` fraction IID, the rest from one dominant class,
    ``R`` samples per client.  ``shard`` mode: ``P`` shards per class over
    ``L`` classes, ``N`` classes per client, ``M = L P / N``.
    """

    mode: str = "alpha"
    M: int = 16
    R: int = 200
    gamma: float = 0.5
    N: int = 2
    P: int = 2
    L: int | None = None

    def __post_init__(self):
        if self.mode not in ("alpha", "shard"):
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.mode == "alpha":
            if not 0.0 <= self.gamma <= 1.0:
                raise ValueError("gamma must be in [0, 1]")
            if self.M < 1 or self.R < 2:
                raise ValueError("alpha mode needs M >= 1 and R >= 2")
        else:
            if self.N < 1 or self.P < 1:
                raise ValueError("N and P must be positive")


# -- synthetic data ----------------------------------------------------------

def class_directions(num_classes: int, dim: int, seed: int) -> np.ndarray:
    """Unit directions, orthonormal when ``num_classes <= dim``."""
    g = rngmod.stream(seed, "data_gen", step=0).normal(size=(max(num_classes, dim), dim))
    if num_classes <= dim:
        q, _ = np.linalg.qr(g[:dim].T)
        return q.T[:num_classes].copy()
    u = g[:num_classes]
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def gen_synthetic(num_classes: int, dim: int, separation: float, n_per_class: int,
                  seed: int) -> Pool:
    """Isotropic unit-variance Gaussian blobs centred at ``separation * u_k``."""
    if num_classes < 2 or dim < 1 or separation < 0 or n_per_class < 1:
        raise ValueError("need num_classes >= 2, dim >= 1, separation >= 0, n_per_class >= 1")
    means = separation * class_directions(num_classes, dim, seed)
    noise = rngmod.stream(seed, "data_gen", step=1).normal(size=(num_classes, n_per_class, dim))
    features = (means[:, None, :] + noise).reshape(-1, dim)
    labels = np.repeat(np.arange(num_classes), n_per_class)
    return Pool(features, labels, num_classes)


# -- splitting ---------------------------------------------------------------

def train_test_split(labels, rng: np.random.Generator, train_fraction: float = TRAIN_FRACTION):
    """Stratified split: order by (class, random), then every k-th row is test."""
    labels = np.asarray(labels)
    n = len(labels)
    n_test = n - int(round(train_fraction * n))
    if n_test == 0:
        return np.arange(n), np.zeros(0, dtype=np.int64)
    order = np.lexsort((rng.permutation(n), labels))
    # evenly spaced positions over the class-sorted order
    pos = np.floor((np.arange(n_test) + 0.5) * n / n_test).astype(np.int64)
    is_test = np.zeros(n, dtype=bool)
    is_test[order[pos]] = True
    return np.flatnonzero(~is_test), np.flatnonzero(is_test)


def make_client(pool: Pool, rows, seed: int, client: int, dominant=None) -> ClientDataset:
    rows = np.asarray(rows, dtype=np.int64)
    labels = pool.labels[rows]
    train, test = train_test_split(labels, rngmod.stream(seed, "split", client=client))
    return ClientDataset(pool.features[rows].copy(), labels.copy(), pool.num_classes,
                         train, test, dominant)


# -- partitioners ------------------------------------------------------------

def partition_alpha(pool: Pool, spec: PartitionSpec, seed: int,
                    dominant_classes=None) -> list[ClientDataset]:
    """``round(gamma R)`` IID rows plus the remainder from a dominant class.

    Rows are distinct within a client; the pool is reused across clients.
    Dominant classes default to ``client mod num_classes``.
    """
    if spec.mode != "alpha":
        raise ValueError("partition_alpha needs an alpha-mode spec")
    n_iid = int(round(spec.gamma * spec.R))
    n_dom = spec.R - n_iid
    if dominant_classes is None:
        dominant_classes = [i % pool.num_classes for i in range(spec.M)]
    if len(dominant_classes) != spec.M:
        raise ValueError("need one dominant class per client")
    if len(pool) < spec.R:
        raise InsufficientPoolError(
            f"pool has {len(pool)} samples but each client needs R={spec.R} "
            f"(shortfall {spec.R - len(pool)})")
    by_class = [np.flatnonzero(pool.labels == c) for c in range(pool.num_classes)]
    clients = []
    for i, dom in enumerate(dominant_classes):
        r = rngmod.stream(seed, "partition", client=i)
        iid = r.choice(len(pool), size=n_iid, replace=False) if n_iid else np.zeros(0, np.int64)
        avail = np.setdiff1d(by_class[dom], iid)
        if len(avail) < n_dom:
            raise InsufficientPoolError(
                f"client {i}: dominant class {dom} has {len(avail)} unused samples, "
                f"needs {n_dom} (shortfall {n_dom - len(avail)})")
        dominant = r.choice(avail, size=n_dom, replace=False)
        rows = np.concatenate([iid, dominant])
        clients.append(make_client(pool, rows, seed, i, dom))
    return clients


def partition_shard(pool: Pool, spec: PartitionSpec, seed: int) -> list[ClientDataset]:
    """Each client gets ``N`` distinct classes, one shard of each."""
    if spec.mode != "shard":
        raise ValueError("partition_shard needs a shard-mode spec")
    L = pool.num_classes if spec.L is None else spec.L
    if L != pool.num_classes:
        raise ValueError(f"spec L={L} but pool has {pool.num_classes} classes")
    if spec.N > L:
        raise ValueError(f"N={spec.N} exceeds the number of classes L={L}")
    if (L * spec.P) % spec.N:
        raise ValueError(f"L*P = {L * spec.P} is not divisible by N = {spec.N}")
    M = L * spec.P // spec.N
    if spec.M not in (None, M):
        raise ValueError(f"spec M={spec.M} but L*P/N = {M}")
    r = rngmod.stream(seed, "partition")
    shards = {}
    for c in range(L):
        rows = np.flatnonzero(pool.labels == c)
        if len(rows) < spec.P:
            raise InsufficientPoolError(
                f"class {c} has {len(rows)} samples, needs at least P={spec.P}")
        for p, chunk in enumerate(np.array_split(r.permutation(rows), spec.P)):
            shards[(c, p)] = chunk
    # Consecutive blocks of P tokens per class, dealt with stride M, never give
    # a client the same class twice because P <= M.
    tokens = [(c, p) for c in r.permutation(L) for p in range(spec.P)]
    owner = r.permutation(M)
    assigned = [[] for _ in range(M)]
    for pos, tok in enumerate(tokens):
        assigned[owner[pos % M]].append(tok)
    clients = []
    for i in range(M):
        rows = np.concatenate([shards[t] for t in sorted(assigned[i])])
        clients.append(make_client(pool, rows, seed, i))
    return clients


def partition(pool: Pool, spec: PartitionSpec, seed: int) -> list[ClientDataset]:
    if spec.mode == "alpha":
        return partition_alpha(pool, spec, seed)
    return partition_shard(pool, spec, seed)


# -- feature files -----------------------------------------------------------

def write_feature_file(path, pool: Pool) -> None:
    """Little-endian: magic, version, n, d, classes, f32 rows, u16 labels."""
    n, d = pool.features.shape
    if pool.num_classes > 65536:
        raise ValueError("labels must fit in u16")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FILE_VERSION, n, d, pool.num_classes))
        fh.write(np.ascontiguousarray(pool.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(pool.labels, dtype="<u2").tobytes())


def load_feature_file(path) -> Pool:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a P4FT feature file")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated")
    _, version, n, d, k = _HEADER.unpack_from(raw)
    if version != FILE_VERSION:
        raise FeatureFileError(f"{path}: unsupported version {version}")
    need = _HEADER.size + 4 * n * d + 2 * n
    if len(raw) < need:
        raise TruncatedFileError(f"{path}: expected {need} bytes, found {len(raw)}")
    if len(raw) > need:
        raise FeatureFileError(f"{path}: {len(raw) - need} trailing bytes")
    off = _HEADER.size
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=off + 4 * n * d)
    if n and labels.max() >= k:
        raise LabelRangeError(f"{path}: label {int(labels.max())} >= num_classes {k}")
    return Pool(feats.astype(np.float64), labels.astype(np.int64), int(k))
