"""Deterministic random-stream derivation.

Every stochastic component draws from a PCG64 generator whose seed is derived
from an integer key tuple, so any (root seed, seed index, episode id) triple
maps to the same stream on every machine and every run.
"""

from __future__ import annotations

import numpy as np

SeedLike = int | tuple[int, ...]


def _as_tuple(seed: SeedLike) -> tuple[int, ...]:
    if isinstance(seed, tuple):
        return tuple(int(s) for s in seed)
    return (int(seed),)


def stream(seed: SeedLike, *subkeys: int) -> np.random.Generator:
    """Generator keyed by ``(seed..., subkeys...)``."""
    entropy = _as_tuple(seed) + tuple(int(k) for k in subkeys)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def episode_stream(seed: SeedLike, episode_id: int) -> np.random.Generator:
    """Independent per-episode stream; episodes never share RNG state."""
    return stream(seed, int(episode_id))
