"""Seed discipline: every random stream derives from one master seed.

A stream seed is sha256(master_seed || label) truncated to 63 bits, so the
derivation is stable across platforms and Python versions. No module-level
RNG state exists anywhere in the package.
"""

from __future__ import annotations

import hashlib

import numpy as np


def split_seed(master: int, label: str) -> int:
    """Derive a child seed from a master seed and a stream label."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def make_rng(seed: int, label: str = "") -> np.random.Generator:
    """Build a PCG64 generator for one named stream."""
    if label:
        seed = split_seed(seed, label)
    return np.random.Generator(np.random.PCG64(seed))
