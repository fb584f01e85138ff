"""Deterministic random streams.

Every stochastic call in the simulator draws from a generator derived from
``(master_seed, tag, *ids)`` so that changing one module never perturbs the
draws of another.
"""

from __future__ import annotations

import hashlib

import numpy as np


def tag_id(tag: str) -> int:
    return int.from_bytes(hashlib.sha256(tag.encode()).digest()[:4], "little")


def derive_rng(master_seed: int, tag: str, *ids: int) -> np.random.Generator:
    """Return an independent generator for ``(master_seed, tag, *ids)``."""
    for i in ids:
        if i < 0:
            raise ValueError(f"stream ids must be non-negative, got {i}")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(tag_id(tag), *map(int, ids)))
    return np.random.default_rng(seq)
