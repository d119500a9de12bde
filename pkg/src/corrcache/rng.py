"""Named, reproducible random streams.

Every consumer of randomness (arrival clock, modulating chain, document
draws, randomized eviction) gets its own stream derived from the run seed
and a stable name, so adding draws to one consumer never perturbs another.
"""

from __future__ import annotations

import zlib

import numpy as np

RNG_ALGORITHM = "numpy-Philox4x64-10/SeedSequence+crc32-name"


def stream(seed: int, name: str) -> np.random.Generator:
    """Return the generator for ``name`` under run ``seed``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(name.encode("utf-8")),))
    return np.random.Generator(np.random.Philox(ss))
