"""Reproducible random streams keyed by (seed, replicate, stream id).

Every stream is an independent counter-based Philox generator derived from a
``SeedSequence`` whose spawn key encodes the replicate and stream name, so
locations, fields and optimizer starts never share random numbers.
"""

from __future__ import annotations

import zlib

import numpy as np

LOCATIONS = "locations"
FIELD = "field"
MULTISTART = "multistart"


def _key_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream key integers must be nonnegative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *key) -> np.random.Generator:
    """Return the generator for ``seed`` and a key such as ``(replicate, "field")``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_part(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(seed_or_rng, *key) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return stream(seed_or_rng, *key)
