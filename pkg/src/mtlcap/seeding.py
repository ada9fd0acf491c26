"""Deterministic per-component RNG derivation.

Every source of randomness in the package flows from one master seed.
Component streams are derived by hashing (seed, name) with SHA-256, so the
same (seed, name) pair yields the same stream on every platform and Python
process (built-in hash() is salted and must not be used here).
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{master_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(master_seed: int, name: str) -> np.random.Generator:
    """Return a Generator for one named component of the pipeline."""
    return np.random.default_rng(derive_seed(master_seed, name))
