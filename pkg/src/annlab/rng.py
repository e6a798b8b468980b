"""Seed splitting.

Every random stream is derived from one 64-bit root seed plus a tuple of
stream keys via :class:`numpy.random.SeedSequence`.  String keys are mapped
to integers with CRC-32, so a stream is identified by e.g.
``(seed, "subnet", 2)`` independently of the order in which streams are
requested.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("stream keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode())


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & (2**64 - 1)] + [_key(k) for k in keys])


def make_rng(seed, *keys) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed_sequence(seed, *keys))
