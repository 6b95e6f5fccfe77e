"""Counter-based random streams.

Every random draw in the simulator comes from a stream keyed by
``(seed, purpose, client, round, step)``.  Streams are independent Philox
generators, so results do not depend on execution order or worker count.
"""
from __future__ import annotations

import numpy as np

# Stable integer codes; never renumber, results depend on them.
PURPOSES = {
    "data_gen": 1,
    "partition": 2,
    "split": 3,
    "malicious": 4,
    "peer_sample": 5,
    "random_pair": 6,
    "random_groups": 7,
    "client_sample": 8,
    "data_sample": 9,
    "dp_noise": 10,
    "byz_random": 11,
    "init": 12,
    "warmup_sample": 13,
    "warmup_noise": 14,
}


def stream(seed: int, purpose: str, client: int = -1, round: int = -1,
           step: int = -1) -> np.random.Generator:
    """Return a fresh generator for one keyed purpose.

    ``-1`` marks an unused coordinate of the key.
    """
    if purpose not in PURPOSES:
        raise KeyError(f"unknown RNG purpose {purpose!r}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    key = [int(seed), PURPOSES[purpose], client + 1, round + 1, step + 1]
    if min(key) < 0:
        raise ValueError(f"invalid stream key {key}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
