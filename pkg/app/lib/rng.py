"""
Keyed random streams.

Every random draw in an experiment comes from a generator derived from the
root seed, a stream id and integer keys (client id, round, ...). Nothing
holds mutable generator state between draws, so the order in which clients
are processed never changes what any of them sees.

Use a fixed number of keys per stream: the underlying seed sequence pads
short entropy with zeros, so (s, k) and (s, k, 0) collide.
"""

from enum import IntEnum
import numpy as np


class Stream(IntEnum):
    DATA = 0
    PARTITION = 1
    INIT = 2
    SAMPLE = 3
    CLIENT = 4
    CVAE = 5
    SYNTHETIC = 6


def rng_derive(seed: int, stream: Stream, *keys: int) -> np.random.Generator:
    """
    Build the generator for (seed, stream, *keys).

    Args:
        seed: Root experiment seed (non-negative)
        stream: Purpose of the draws
        keys: Further non-negative integer keys

    Returns:
        np.random.Generator: A fresh PCG64 generator
    """
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), int(stream), *(int(k) for k in keys)])
    )


def seed_derive(seed: int, stream: Stream, *keys: int) -> int:
    """Integer seed for APIs that take one, drawn from `rng_derive`."""
    return int(rng_derive(seed, stream, *keys).integers(np.iinfo(np.int64).max))
