"""Seeded random streams.

All randomness goes through Philox-4x64 (a counter-based generator) keyed by
a ``numpy.random.SeedSequence``. A stream is named by a master seed plus a
path of labels; string labels are hashed with CRC-32 so the mapping is stable
across platforms and Python versions. Two different paths give statistically
independent streams, and any stream can be recreated in isolation.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream labels must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(seed: int, *path) -> np.random.SeedSequence:
    if int(seed) < 0:
        raise ValueError("seeds must be non-negative 64-bit integers")
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_label(p) for p in path))


def make_rng(seed: int, *path) -> np.random.Generator:
    """Generator for the stream ``(seed, *path)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *path)))


def derive_seed(seed: int, *path) -> int:
    """A 63-bit integer seed for the child stream, suitable for logging and replay."""
    return int(seed_sequence(seed, *path).generate_state(2, np.uint32).view(np.uint64)[0] >> np.uint64(1))
