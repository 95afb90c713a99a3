"""Seed derivation.

Every random stream in the package is a ``random.Random`` seeded with a
64-bit value derived from a base seed by :func:`mix`.  ``mix(base, i)`` is
the ``i``-th output of a SplitMix64 generator whose state starts at
``base``::

    z = (base + (i + 1) * 0x9E3779B97F4A7C15) mod 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    return z ^ (z >> 31)

Derived streams depend only on ``(base, i)``, so work split across
processes reproduces the serial result exactly.
"""

from __future__ import annotations

import random

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix(base: int, index: int) -> int:
    z = (base + (index + 1) * GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def rng(seed: int) -> random.Random:
    return random.Random(seed & MASK64)
