"""Seed plumbing.

Every random routine in the package takes an explicit integer seed.  Derived
streams are obtained by hashing ``"<root>/<label>"`` with BLAKE2b (8-byte
digest, little endian), so a stream seed depends only on the root seed and the
label text, never on call order.
"""

from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def derive_seed(root: int, label: str | int) -> int:
    """Return the 64-bit stream seed for ``(root, label)``."""
    digest = hashlib.blake2b(f"{int(root) & SEED_MASK}/{label}".encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & SEED_MASK))
