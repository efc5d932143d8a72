"""Deterministic sub-seed derivation.

Every random stream in a run (split, init, per-epoch shuffle, per-epoch
neighbor sampling, per-batch dropout, negative sampling) hangs off a single
run seed through named sub-seeds, so no stream perturbs another.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, *names) -> int:
    """Map (seed, name parts) to a stable 64-bit integer seed."""
    key = ":".join([str(int(seed)), *(str(n) for n in names)]).encode()
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "big")


def derive_rng(seed: int, *names) -> np.random.Generator:
    """A fresh Generator seeded from ``derive_seed(seed, *names)``."""
    return np.random.default_rng(derive_seed(seed, *names))
