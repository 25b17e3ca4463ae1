"""Deterministic seed derivation for parallel Monte Carlo work.

Every stochastic routine takes an explicit integer seed and derives child
generators through ``SeedSequence`` keyed on (seed, *path).  Work items keyed
by their index therefore produce the same streams no matter how they are
scheduled across workers.
"""

from __future__ import annotations

import numpy as np


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Return a generator keyed on ``(seed, *path)``.

    The path is typically a replication or draw index; identical keys give
    bitwise-identical streams on every platform numpy supports.
    """
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    entropy = [seed] + [int(k) for k in path]
    if any(k < 0 for k in entropy):
        raise ValueError("seed path components must be non-negative")
    return np.random.default_rng(np.random.SeedSequence(entropy))
