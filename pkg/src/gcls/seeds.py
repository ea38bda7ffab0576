"""Derived random streams.

Every stochastic choice in the pipeline draws from a generator created
here, keyed by the run seed plus a small tuple of tags (a purpose label
and integer indices such as launch id or epoch).  Distinct tag tuples
yield statistically independent streams, and the same tuple always
yields the same stream, which is what makes reruns bit-reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_value(tag: int | str) -> int:
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    return int(tag)


def seed_sequence_for(seed: int, *tags: int | str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed)] + [_tag_value(t) for t in tags])


def rng_for(seed: int, *tags: int | str) -> np.random.Generator:
    """Generator for one (seed, *tags) stream."""
    return np.random.Generator(np.random.PCG64(seed_sequence_for(seed, *tags)))
