"""Seeded random streams.

Every generator call draws from a Philox-4x64 counter-based bit generator
keyed by ``(seed, *keys)``, so a stream for (task, split, index) is stable
regardless of how many other streams were consumed before it, and numpy
guarantees the Philox stream is the same on every platform.
"""
from __future__ import annotations

import zlib

import numpy as np

ALGORITHM = "Philox4x64-10 (numpy.random.Philox) via SeedSequence"


def _key_word(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for the stream identified by ``seed`` and ``keys``."""
    entropy = [_key_word(seed)] + [_key_word(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys) -> int:
    """A 63-bit integer seed for libraries that take a plain int (torch)."""
    entropy = [_key_word(seed)] + [_key_word(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0] >> 1)
