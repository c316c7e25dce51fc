"""Seed derivation and generator construction.

Every stochastic routine in the package takes an explicit 64-bit seed and
builds a fresh ``numpy.random.Generator`` backed by PCG64 (O'Neill's
permuted congruential generator, 128-bit state).  Child seeds for steps,
models and replicates are derived with a keyed BLAKE2b hash so that the
mapping ``(master_seed, *keys) -> seed`` is stable across platforms,
Python versions and process boundaries.
"""

import hashlib
import struct

import numpy as np

__all__ = ["derive_seed", "make_rng", "SEED_MASK"]

SEED_MASK = (1 << 64) - 1
_PERSON = b"collapselab-v1"


def derive_seed(master_seed, *keys):
    """Return a 64-bit child seed for ``(master_seed, *keys)``.

    The digest is BLAKE2b-64 over the little-endian signed 64-bit encodings
    of the master seed followed by each key.  Keys are usually the step
    index ``t`` and the model index.
    """
    parts = [int(master_seed) & SEED_MASK] + [int(k) for k in keys]
    payload = struct.pack("<Q" + "q" * len(keys), *parts)
    digest = hashlib.blake2b(payload, digest_size=8, person=_PERSON).digest()
    return struct.unpack("<Q", digest)[0]


def make_rng(seed):
    """PCG64 generator for a 64-bit seed."""
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.Generator(np.random.PCG64(int(seed) & SEED_MASK))
