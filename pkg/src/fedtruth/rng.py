"""Deterministic random-stream derivation.

Every stochastic site in the simulator draws from its own generator, derived
from (master_seed, purpose, *indices). Streams are independent of execution
order and worker count, so results only depend on the master seed.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(master_seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Return a generator unique to (master_seed, purpose, indices).

    The purpose tag is hashed with crc32, which is stable across processes
    and platforms (unlike the builtin hash).
    """
    key = [int(master_seed) & 0xFFFFFFFF, zlib.crc32(purpose.encode("utf-8"))]
    key.extend(int(i) & 0xFFFFFFFF for i in indices)
    return np.random.default_rng(np.random.SeedSequence(key))
