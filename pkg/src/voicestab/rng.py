"""Named, splittable random streams.

Every stochastic choice in the package draws from a stream derived from a
64-bit seed plus a tuple of string/int tokens naming the decision site
(e.g. ``(seed, clip_id, copy, "time_mask")``).  Streams are independent of
iteration order and worker count: the same key always yields the same
Philox counter-based generator.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_key(seed: int, *tokens) -> int:
    """Hash (seed, tokens...) into a 128-bit integer Philox key."""
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(seed)).encode())
    for tok in tokens:
        h.update(b"\x1f")
        h.update(str(tok).encode())
    return int.from_bytes(h.digest(), "little")


def stream(seed: int, *tokens) -> np.random.Generator:
    """Return the generator for the (seed, tokens...) decision site."""
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *tokens)))
