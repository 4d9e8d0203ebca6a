"""Deterministic random substreams and sample-point generators.

Every randomized subsystem draws from a substream keyed by (seed, purpose),
derived through sha256, so results are reproducible across runs and
platforms and independent of PYTHONHASHSEED.
"""

from __future__ import annotations

import cmath
import hashlib
import random
from fractions import Fraction


def substream(seed: int, purpose: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{purpose}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def complex_sample(rng: random.Random, lo: float = 0.5, hi: float = 2.0) -> complex:
    r = lo + (hi - lo) * rng.random()
    theta = 2 * cmath.pi * rng.random()
    return r * cmath.exp(1j * theta)


def rational_sample(rng: random.Random) -> Fraction:
    sign = rng.choice((-1, 1))
    return Fraction(sign * rng.randint(5, 40), rng.randint(4, 16))


def rational_int_sample(rng: random.Random, lo: int = -5, hi: int = 5,
                        exclude=()) -> Fraction:
    for _ in range(100):
        v = Fraction(rng.randint(lo, hi))
        if v not in exclude and v != 0:
            return v
    return Fraction(2)
