"""Seed splitting: one run seed fans out into independent named streams.

A stream is keyed by ``(seed, *labels)``. String labels are hashed with
CRC32 so the mapping is stable across processes and Python versions.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(label) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("integer stream labels must be non-negative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def stream(seed: int, *labels) -> np.random.Generator:
    """Return the generator for ``(seed, *labels)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(_key, labels)]))


def child_seed(seed: int, *labels) -> int:
    """A derived 32-bit integer seed, for APIs that take an int."""
    return int(stream(seed, *labels).integers(0, 2**32 - 1))
