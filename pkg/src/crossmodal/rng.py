"""Seeded random streams.

Every generator in the package draws from a stream identified by a master
seed and a tuple of integer stream ids. The mix is numpy's ``SeedSequence``
with entropy ``(master_seed, *stream_ids)``, whose output is guaranteed stable
across numpy releases, feeding a ``PCG64`` bit generator.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def stream_key(*parts: int | str) -> tuple[int, ...]:
    """Normalize stream id parts to non-negative ints (strings via CRC32)."""
    out = []
    for part in parts:
        if isinstance(part, str):
            out.append(zlib.crc32(part.encode("utf-8")))
        else:
            out.append(int(part) & _MASK64)
    return tuple(out)


def make_rng(seed: int, *stream_ids: int | str) -> np.random.Generator:
    """Independent reproducible generator for ``(seed, *stream_ids)``."""
    entropy = stream_key(seed, *stream_ids)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *stream_ids: int | str) -> int:
    """A 63-bit integer seed derived from the same mix as :func:`make_rng`."""
    state = np.random.SeedSequence(stream_key(seed, *stream_ids)).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)
