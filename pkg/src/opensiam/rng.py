"""Seeded random streams.

Every stochastic step draws from ``numpy.random.Generator`` backed by PCG64
(PCG XSL RR 128/64). Its output stream is fixed by the seed alone and does not
depend on platform or thread count, so splits, pairs and initial weights
reproduce across machines.

Independent sub-seeds are derived with :func:`mix_seed`, a SplitMix64 fold over
the integer parts.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# stage tags for sub-seeds of a single trial
STAGE_SPLIT = 1
STAGE_PAIRS = 2
STAGE_INIT = 3
STAGE_TRAIN = 4


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix_seed(*parts: int) -> int:
    """Fold nonnegative integers into one 64-bit seed.

    ``h = splitmix64(h ^ splitmix64(p))`` over the parts, starting from
    ``h = 0``. Order matters: ``mix_seed(1, 2) != mix_seed(2, 1)``.
    """
    h = 0
    for p in parts:
        if p < 0:
            raise ValueError(f"seed parts must be nonnegative, got {p}")
        h = splitmix64(h ^ splitmix64(p & MASK64))
    return h


def make_rng(seed: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))
