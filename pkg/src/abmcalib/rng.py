"""Deterministic RNG stream derivation.

Every stochastic task gets its own ``numpy.random.Generator`` derived by
hashing (master seed, scenario id, purpose tag), so streams never overlap
and results do not depend on execution order or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_entropy(master_seed: int, *tags: object) -> int:
    key = "\x1f".join([str(int(master_seed))] + [str(t) for t in tags])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def derive_rng(master_seed: int, *tags: object) -> np.random.Generator:
    """Return an independent PCG64 generator keyed by ``master_seed`` and ``tags``."""
    seq = np.random.SeedSequence(stream_entropy(master_seed, *tags))
    return np.random.Generator(np.random.PCG64(seq))


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
