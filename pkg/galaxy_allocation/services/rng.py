"""Seeded random substreams.

One 64-bit master seed drives every draw. Each consumer asks for its own
generator by purpose label and index, so simulation, initialisation and noise
draws stay reproducible independently of each other.
"""
import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def substream(seed, label, index=0):
    """Return a generator derived from ``(seed, label, index)``."""
    key = f'{int(seed) & SEED_MASK}:{label}:{int(index)}'.encode()
    digest = hashlib.blake2b(key, digest_size=16).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest, 'little')))
