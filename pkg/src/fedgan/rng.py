"""Deterministic seed derivation for replayable simulations.

Every random draw in the package comes from a numpy PCG64 generator
seeded through derive_seed, so a whole experiment replays bit-identically
from one 64-bit root seed. The derivation is a SplitMix64 hash chain:

    derive_seed(root, stream, index)
        = mix(mix(mix(root) ^ stream) ^ index)

where mix is the SplitMix64 finalizer. Distinct (stream, index) pairs
give statistically independent generators, which lets simulated clients
run in parallel without sharing RNG state.
"""

from __future__ import annotations

import numpy as np

__all__ = ["derive_seed", "make_rng"]

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(root: int, stream: int, index: int = 0) -> int:
    """Derive a child seed from (root, stream, index); pure and collision-resistant."""
    h = _splitmix64(root & _MASK64)
    h = _splitmix64(h ^ (stream & _MASK64))
    h = _splitmix64(h ^ (index & _MASK64))
    return h


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))
