"""Keyed random streams.

Every stream is addressed by ``(seed, purpose, *keys)`` and built from a
:class:`numpy.random.SeedSequence` whose spawn key encodes the purpose and the
integer keys. Streams with different addresses are statistically independent
and no stream depends on how much another one has been consumed.
"""
import zlib

import numpy as np

PURPOSES = ("timing", "batch", "data", "partition", "sample", "init", "mc", "replicate")


def purpose_code(purpose):
    if purpose not in PURPOSES:
        raise ValueError(f"unknown stream purpose {purpose!r}")
    return zlib.crc32(purpose.encode("ascii"))


def seed_sequence(seed, purpose, *keys):
    keys = tuple(int(k) for k in keys)
    if any(k < 0 for k in keys):
        raise ValueError("stream keys must be non-negative")
    return np.random.SeedSequence(int(seed), spawn_key=(purpose_code(purpose),) + keys)


def keyed_rng(seed, purpose, *keys):
    """Return a fresh ``Generator`` for the stream ``(seed, purpose, *keys)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, purpose, *keys)))


def derive_seed(seed, purpose, *keys):
    """A 63-bit integer seed derived from the stream address."""
    state = seed_sequence(seed, purpose, *keys).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
