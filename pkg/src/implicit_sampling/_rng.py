"""Seeded, splittable random streams.

Every stochastic routine takes either an explicit ``numpy.random.Generator``
or derives one from ``(seed, *keys)``.  Substreams are keyed with
``SeedSequence.spawn_key`` so chunk ``i`` of a parallel job always sees the
same numbers regardless of how many workers run.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k)


def substream(seed: int, *keys) -> np.random.Generator:
    """Generator for the substream of ``seed`` addressed by ``keys``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise ValueError("an explicit seed or Generator is required")
    return substream(int(rng))
