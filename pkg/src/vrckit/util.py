"""Seeded RNG substreams and weight-init helpers."""

from __future__ import annotations

import zlib

import numpy as np


def rng_for(seed, *names):
    """Deterministic Generator for a named substream of a master seed.

    Substreams for distinct names are independent; the same (seed, names)
    always yields the same stream, on any platform.
    """
    keys = [int(seed) & 0xFFFFFFFF]
    keys.extend(zlib.crc32(str(n).encode("utf-8")) for n in names)
    return np.random.default_rng(np.random.SeedSequence(keys))


def uniform_fan_in(rng, fan_in, shape):
    """Uniform init in +-sqrt(1/fan_in), the scale-preserving default."""
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape)
