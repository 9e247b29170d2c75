"""Seed-stream derivation.

Every random draw in the package comes from a generator built by
:func:`stream`, keyed by ``(master_seed, tag, *indices)``.  Tags are hashed
with CRC-32 so the mapping is stable across processes and interpreters.
"""
from __future__ import annotations

import zlib

import numpy as np


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def seed_sequence(seed: int, tag: str, *indices: int) -> np.random.SeedSequence:
    if seed is None:
        raise ValueError("an explicit integer seed is required")
    key = (_tag_key(tag),) + tuple(int(i) for i in indices)
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


def stream(seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Independent generator for ``(seed, tag, *indices)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, tag, *indices)))


def derive_seed(seed: int, tag: str, *indices: int) -> int:
    """Integer child seed, for APIs that take a plain seed."""
    return int(seed_sequence(seed, tag, *indices).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
