"""Seed handling. Every stochastic routine takes an explicit seed."""

import struct

import numpy as np


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng([int(s) for s in seed])
    return np.random.default_rng(seed)


def float_key(x: float) -> int:
    """Stable integer key for a float, used to derive per-decision substreams."""
    return struct.unpack("<Q", struct.pack("<d", float(x)))[0]


def substream(seed, *keys) -> np.random.Generator:
    """Deterministic child generator for ``(seed, *keys)``.

    Integer keys only; ``seed=None`` gives fresh entropy.
    """
    if seed is None:
        return np.random.default_rng()
    if isinstance(seed, np.random.Generator):
        base = int(seed.integers(0, 2**63))
    else:
        base = int(seed)
    return np.random.default_rng([base, *[int(k) for k in keys]])
