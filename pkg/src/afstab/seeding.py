"""Counter-based random streams.

Every random draw in the package flows from the single experiment seed
through a Philox key derived from a stage label, so that the order in
which independent stages execute (or whether they run in parallel)
cannot change any result.
"""

import hashlib

import numpy as np


def derive_key(seed: int, *labels) -> int:
    """128-bit Philox key from the master seed and a label path."""
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(seed)).encode())
    for lab in labels:
        h.update(b"/")
        h.update(str(lab).encode())
    return int.from_bytes(h.digest(), "little")


def rng_for(seed: int, *labels) -> np.random.Generator:
    """Independent generator for the stage identified by `labels`."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *labels)))
