"""Seed handling: every stochastic operation takes an explicit seed.

Seeds are mixed through numpy's SeedSequence so that derived streams
(per-trial, per-cell) are statistically independent and reproducible on
any platform.  Floats entering a seed derivation are hashed by their IEEE
bit pattern, not their decimal rendering.
"""

from __future__ import annotations

import numpy as np


def rng_from_seed(seed: int) -> np.random.Generator:
    if not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {type(seed).__name__}")
    return np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1)))


def _as_words(part) -> list[int]:
    if isinstance(part, (bool, np.bool_)):
        return [int(part)]
    if isinstance(part, (int, np.integer)):
        return [int(part) & (2**64 - 1)]
    if isinstance(part, (float, np.floating)):
        return [int(np.float64(part).view(np.uint64))]
    if isinstance(part, str):
        return [b for b in part.encode("utf-8")]
    raise TypeError(f"cannot mix {type(part).__name__} into a seed")


def derive_seed(base_seed: int, *parts) -> int:
    """Stable 64-bit seed derived from a base seed and heterogeneous parts."""
    entropy: list[int] = [int(base_seed) & (2**64 - 1)]
    for p in parts:
        entropy.extend(_as_words(p))
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, dtype=np.uint64)[0])
