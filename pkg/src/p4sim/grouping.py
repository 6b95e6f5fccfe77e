"""Decentralized group formation from one-epoch DP warm-up weights.

Step 1 scores each client against ``H`` random peers with the l1 distance,
step 2 builds two-member groups from mutual nearest neighbours, step 3
greedily merges the most similar groups (single linkage) up to size ``V``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from . import model as mdl
from . import privacy as dp


def dissimilarity(w_i, w_j) -> float:
    w_i = np.asarray(w_i, dtype=np.float64)
    w_j = np.asarray(w_j, dtype=np.float64)
    if w_i.shape != w_j.shape:
        raise ValueError(f"length mismatch: {w_i.shape} vs {w_j.shape}")
    return float(np.abs(w_i - w_j).sum())


class SimilarityCache(dict):
    """``(i, j) -> l1 distance`` with ``i < j``; lookups accept either order."""

    def get_pair(self, i: int, j: int):
        return self.get((i, j) if i < j else (j, i))

    def put(self, i: int, j: int, value: float) -> None:
        self[(i, j) if i < j else (j, i)] = float(value)

    def peers(self, i: int) -> dict[int, float]:
        out = {}
        for (a, b), v in self.items():
            if a == i:
                out[b] = v
            elif b == i:
                out[a] = v
        return out

    def clients(self) -> set[int]:
        return {c for pair in self for c in pair}


@dataclass
class GroupAssignment:
    groups: list[list[int]]
    M: int

    def __post_init__(self):
        self.groups = sorted(sorted(int(c) for c in g) for g in self.groups)
        flat = [c for g in self.groups for c in g]
        if sorted(flat) != list(range(self.M)):
            raise ValueError("groups must be a disjoint cover of all clients")

    def matrix_view(self) -> np.ndarray:
        G = np.zeros((self.M, self.M), dtype=bool)
        for g in self.groups:
            for a, b in combinations(g, 2):
                G[a, b] = G[b, a] = True
        return G

    def group_of(self, client: int) -> int:
        for k, g in enumerate(self.groups):
            if client in g:
                return k
        raise KeyError(client)

    def to_json(self) -> list[list[int]]:
        return [list(g) for g in self.groups]


def default_H(M: int) -> int:
    return 35 if M > 35 else max(1, M - 1)


# -- step 1 ------------------------------------------------------------------

def sample_and_score(weights, H: int, rng: np.random.Generator) -> SimilarityCache:
    """Each client scores ``H`` random peers; scores are shared in both directions."""
    M = len(weights)
    if M < 2:
        return SimilarityCache()
    if not 1 <= H <= M - 1:
        raise ValueError(f"H must be in [1, {M - 1}], got {H}")
    cache = SimilarityCache()
    for i in range(M):
        others = np.array([j for j in range(M) if j != i])
        for j in sorted(rng.choice(others, size=H, replace=False)):
            j = int(j)
            if cache.get_pair(i, j) is None:
                cache.put(i, j, dissimilarity(weights[i], weights[j]))
    return cache


# -- step 2 ------------------------------------------------------------------

def _nearest(i, peers, allowed):
    best = None
    for j in sorted(peers):
        if j in allowed and (best is None or peers[j] < peers[best]):
            best = j
    return best


def mutual_pairing(cache: SimilarityCache, M: int, rng: np.random.Generator | None = None):
    """Two-member groups from mutual nearest unpaired neighbours.

    Then each unpaired client joins its nearest unpaired scored peer; clients
    with no such peer are paired at random.  An odd client out joins the pair
    holding its nearest scored peer.  Returns ``(groups, mutual_pairs)``.
    """
    if M == 1:
        return [[0]], []
    neigh = {i: {} for i in range(M)}
    for (a, b), v in cache.items():
        neigh[a][b] = v
        neigh[b][a] = v
    free = set(range(M))
    groups: list[list[int]] = []
    mutual = []
    for i in range(M):
        if i not in free:
            continue
        k = _nearest(i, neigh[i], free - {i})
        if k is None:
            continue
        if _nearest(k, neigh[k], free - {k}) == i:
            groups.append(sorted((i, k)))
            mutual.append(tuple(sorted((i, k))))
            free -= {i, k}
    for i in range(M):
        if i not in free:
            continue
        k = _nearest(i, neigh[i], free - {i})
        if k is not None:
            groups.append(sorted((i, k)))
            free -= {i, k}
    rest = sorted(free)
    if len(rest) >= 2 and rng is not None:
        rest = [rest[j] for j in rng.permutation(len(rest))]
    while len(rest) >= 2:
        groups.append(sorted((rest.pop(0), rest.pop(0))))
    if rest:
        odd = rest[0]
        if groups:
            member = _nearest(odd, neigh[odd], set(range(M)) - {odd})
            target = 0 if member is None else next(
                g for g, grp in enumerate(groups) if member in grp)
            groups[target] = sorted(groups[target] + [odd])
        else:
            groups.append([odd])
    return groups, mutual


# -- step 3 ------------------------------------------------------------------

def _packable(sizes: tuple[int, ...], V: int, remainder: int) -> bool:
    """Can groups of these sizes be merged into bins of exactly V (plus one of ``remainder``)?"""
    counts = [0] * (V + 1)
    for s in sizes:
        counts[s] += 1
    return _pack(tuple(counts), V, remainder)


@lru_cache(maxsize=None)
def _pack(counts: tuple[int, ...], V: int, remainder: int) -> bool:
    largest = max((s for s in range(1, V + 1) if counts[s]), default=0)
    if largest == 0:
        return remainder == 0
    counts = list(counts)
    counts[largest] -= 1
    targets = [V - largest]
    if remainder and remainder >= largest:
        targets.append(remainder - largest)
    for t_idx, target in enumerate(targets):
        rem = remainder if t_idx == 0 else 0
        for fill in _fills(tuple(counts), target, largest):
            c = list(counts)
            for s in fill:
                c[s] -= 1
            if _pack(tuple(c), V, rem):
                return True
    return False


def _fills(counts, target, max_size):
    """Multisets of available sizes (each <= max_size) summing to ``target``."""
    if target == 0:
        yield ()
        return
    for s in range(min(target, max_size), 0, -1):
        if counts[s]:
            c = list(counts)
            c[s] -= 1
            for rest in _fills(tuple(c), target - s, s):
                yield (s,) + rest


def group_linkage(a, b, cache: SimilarityCache) -> float:
    """Single linkage: smallest known member-to-member distance."""
    best = math.inf
    for i in a:
        for j in b:
            v = cache.get_pair(i, j)
            if v is not None and v < best:
                best = v
    return best


def _spread(group, cache: SimilarityCache) -> float:
    vals = [cache.get_pair(i, j) for i, j in combinations(group, 2)]
    return max((math.inf if v is None else v) for v in vals)


def _feasible(sizes, V: int, remainder: int) -> bool:
    return max(sizes) <= V and _packable(sizes, V, remainder)


def _repair(groups, cache: SimilarityCache, V: int, remainder: int):
    """Dissolve the loosest multi-member groups until a valid packing exists.

    Pairs alone cannot fill odd ``V``, and a triple cannot fit ``V = 2``;
    singletons always pack, so this terminates.
    """
    while not _feasible(tuple(len(g) for g in groups), V, remainder):
        multi = [k for k, g in enumerate(groups) if len(g) > 1]
        worst = max(multi, key=lambda k: (_spread(groups[k], cache), -groups[k][0]))
        groups = [g for k, g in enumerate(groups) if k != worst] + [[c] for c in groups[worst]]
    return groups


def merge_groups(groups, cache: SimilarityCache, V: int, M: int | None = None) -> GroupAssignment:
    """Repeatedly merge the two most similar groups whose union fits in ``V``.

    While a packing into full groups of ``V`` (plus one ``M mod V`` remainder)
    is still reachable, only merges that keep it reachable are considered.
    """
    groups = [sorted(g) for g in groups]
    M = sum(len(g) for g in groups) if M is None else M
    if V > M:
        raise ValueError(f"group size V={V} exceeds client count M={M}")
    if V < 1:
        raise ValueError("V must be >= 1")
    remainder = M % V
    groups = _repair(groups, cache, V, remainder)
    while True:
        sizes = tuple(len(g) for g in groups)
        constrained = _feasible(sizes, V, remainder)
        best = None
        for x, y in combinations(range(len(groups)), 2):
            if len(groups[x]) + len(groups[y]) > V:
                continue
            if constrained:
                nxt = tuple(s for k, s in enumerate(sizes) if k not in (x, y)) + (
                    sizes[x] + sizes[y],)
                if not _packable(nxt, V, remainder):
                    continue
            link = group_linkage(groups[x], groups[y], cache)
            key = (link, min(groups[x][0], groups[y][0]), max(groups[x][0], groups[y][0]))
            if best is None or key < best[0]:
                best = (key, x, y)
        if best is None:
            break
        _, x, y = best
        merged = sorted(groups[x] + groups[y])
        groups = [g for k, g in enumerate(groups) if k not in (x, y)] + [merged]
    return GroupAssignment(groups, M)


def form_groups(weights, V: int, H: int | None, rng_peers, rng_pairs) -> tuple[GroupAssignment, SimilarityCache]:
    """Full phase-1 pipeline on reported warm-up weights."""
    M = len(weights)
    if V > M:
        raise ValueError(f"group size V={V} exceeds client count M={M}")
    if M == 1 or V == 1:
        return GroupAssignment([[i] for i in range(M)], M), SimilarityCache()
    H = default_H(M) if H is None else H
    cache = sample_and_score(weights, H, rng_peers)
    pairs, _ = mutual_pairing(cache, M, rng_pairs)
    return merge_groups(pairs, cache, V, M), cache


def random_groups(M: int, V: int, rng: np.random.Generator) -> GroupAssignment:
    """Uniform random partition into size-V groups (one remainder group)."""
    if V > M:
        raise ValueError(f"group size V={V} exceeds client count M={M}")
    perm = [int(c) for c in rng.permutation(M)]
    return GroupAssignment([perm[k:k + V] for k in range(0, M, V)], M)


# -- warm-up and diagnostics -------------------------------------------------

def warmup_one_epoch(theta: mdl.LinearModel, dataset, privacy: dp.PrivacyParams, lr: float,
                     stream_for, steps: int | None = None) -> np.ndarray:
    """One DP epoch of cross-entropy SGD from the shared ``theta``.

    ``stream_for(purpose, step)`` yields the RNG stream for each step.
    ``steps`` overrides the epoch length (``ceil(R_train / batch)``).
    """
    if dataset.n_train == 0:
        raise ValueError("client has no training samples")
    bsz = dp.batch_size(dataset.n_train, privacy.s)
    if steps is None:
        steps = math.ceil(dataset.n_train / bsz)
    lw = mdl.LossWeights(alpha=0.0, beta=0.0)
    for k in range(steps):
        idx = dp.subsample_data(dataset, privacy.s, stream_for("warmup_sample", k))
        g = mdl.proxy_loss_grad(theta, theta, dataset.features[idx], dataset.labels[idx], lw)
        g = dp.clip_rows(g, privacy.clip_C)
        noisy = dp.noisy_mean(g, privacy.clip_C, privacy.sigma_g, bsz,
                              stream_for("warmup_noise", k))
        theta = mdl.sgd_step(theta, noisy, lr)
    return theta.flatten()


@dataclass
class SeparationReport:
    mean_intra_l1: float
    mean_inter_l1: float
    ratio: float

    def to_dict(self) -> dict:
        return {"mean_intra_l1": self.mean_intra_l1, "mean_inter_l1": self.mean_inter_l1,
                "ratio": self.ratio}


def separation_report(clients_by_distribution) -> SeparationReport:
    """Mean l1 distance within vs across ground-truth distributions."""
    groups = [list(g) for g in clients_by_distribution]
    if len(groups) < 2 or any(len(g) < 2 for g in groups):
        raise ValueError("need at least two distributions with two clients each")
    intra, inter = [], []
    for a, ga in enumerate(groups):
        for i, j in combinations(range(len(ga)), 2):
            intra.append(dissimilarity(ga[i], ga[j]))
        for gb in groups[a + 1:]:
            inter.extend(dissimilarity(u, v) for u in ga for v in gb)
    mi, me = float(np.mean(intra)), float(np.mean(inter))
    return SeparationReport(mi, me, me / mi if mi > 0 else math.inf)
