"""Deterministic RNG substreams derived from one root seed.

Every random choice in the package flows from a root seed through a named
substream, so components reproduce independently of each other. Streams use
the counter-based Philox generator keyed by a hash of (root seed, tags).
"""

import hashlib

import numpy as np


def stream_key(root_seed: int, *tags) -> np.ndarray:
    """128-bit Philox key for the substream named by ``tags``."""
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(root_seed)).encode())
    for tag in tags:
        h.update(b"/")
        h.update(str(tag).encode())
    return np.frombuffer(h.digest(), dtype=np.uint64)


def substream(root_seed: int, *tags) -> np.random.Generator:
    """Isolated generator for one named substream of the root seed."""
    return np.random.Generator(np.random.Philox(key=stream_key(root_seed, *tags)))


def derive_int(root_seed: int, *tags) -> int:
    """Stable derived integer seed for components that take plain ints."""
    return int(stream_key(root_seed, *tags)[0] % (2**31))
