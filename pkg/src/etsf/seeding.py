"""Stable derivation of per-component RNG streams from a master seed.

Python's builtin ``hash`` is salted per process, so stream derivation goes
through sha256 to stay reproducible across runs and machines.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *labels) -> int:
    """Map (master seed, labels...) to a stable 64-bit stream seed."""
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))
