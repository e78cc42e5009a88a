"""Named, splittable randomness: every stochastic site gets its own stream.

A (seed, label) pair is hashed into an independent PCG64 stream, so adding
or reordering call sites never perturbs the draws of the others.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, label: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))
