"""Seed derivation: every env slot and sampler gets an independent SplitMix64 stream."""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1

# stream tags
INIT = 0
ENV = 1
ACTIONS = 2
EVAL = 3


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(base: int, *path: int) -> int:
    """Fold ``path`` into ``base``: ``x <- splitmix64(x ^ p)`` for each component."""
    x = splitmix64(int(base) & _MASK)
    for p in path:
        x = splitmix64(x ^ (int(p) & _MASK))
    return x


def generator(base: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base, *path))
