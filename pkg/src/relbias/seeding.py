"""Seed derivation.

Every random stream in a batch is derived from the batch's master seed with
a splitmix64 hash chain, so a single run (or a single stream inside a run)
can be re-created without replaying anything else::

    run_seed    = derive_seed(master, run_index)
    stream_seed = derive_seed(run_seed, STREAM_ID)
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# stream ids used inside one run
SCHEDULE = 1
SEQUENCE = 2
LETTERS = 3
ORDER = 4
TRANSFER = 5
AGENT = 6


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(parent: int, index: int) -> int:
    return splitmix64(splitmix64(parent & MASK64) ^ (index & MASK64))


def rng_for(parent: int, index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(parent, index))
