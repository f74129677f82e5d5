"""Deterministic random-stream derivation.

All randomness in the package flows from a single root seed.  Named
sub-streams keep parallel work reproducible: a worker derives its own
generator from (root, stream name, indices) and never shares state.
"""
from __future__ import annotations

import zlib

import numpy as np


def seed_stream(root_seed: int, *path: str | int) -> np.random.Generator:
    """Return a generator for the sub-stream identified by ``path``.

    String path elements are hashed with crc32 (stable across runs and
    platforms); integer elements are used as-is.
    """
    key = tuple(
        zlib.crc32(p.encode()) if isinstance(p, str) else int(p) for p in path
    )
    return np.random.default_rng(np.random.SeedSequence(entropy=int(root_seed), spawn_key=key))
