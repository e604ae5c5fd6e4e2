"""Portable seeded randomness.

SplitMix64 (Steele, Lea & Flood 2014) is used instead of :mod:`random` so that a
shuffle is reproducible from the seed alone, in any language:

    state  = (state + 0x9E3779B97F4A7C15) mod 2**64
    z      = state
    z      = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z      = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    output = z ^ (z >> 31)

Bounded draws use rejection sampling, and :func:`shuffle` is a Fisher-Yates
pass from the last index down.
"""

from __future__ import annotations

from typing import MutableSequence, TypeVar

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

T = TypeVar("T")


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError("n must be positive")
        # reject the top partial bucket so every residue is equally likely
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n


def shuffle(items: MutableSequence[T], seed: int) -> MutableSequence[T]:
    rng = SplitMix64(seed)
    for i in range(len(items) - 1, 0, -1):
        j = rng.below(i + 1)
        items[i], items[j] = items[j], items[i]
    return items


def derive_seed(root_seed: int, index: int) -> int:
    """Seed for sub-stream ``index``; distinct indices always give distinct seeds.

    mix64 is a bijection on 64-bit words and the pre-images
    ``root + (index + 1) * GAMMA`` differ for ``index < 2**64``.
    """
    if index < 0:
        raise ValueError("index must be non-negative")
    return mix64((root_seed + (index + 1) * GOLDEN_GAMMA) & MASK64)
