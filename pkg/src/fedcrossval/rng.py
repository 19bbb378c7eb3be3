"""Named, independently seeded random streams.

Every source of randomness in a simulation is a separate numpy Generator
derived from one master seed plus a key of ints/strings, e.g.
``("train", round_index, client_id)``.  Key derivation rule: string parts
are hashed to 64-bit ints with SHA-256, and the tuple
``(master_seed, *encoded_parts)`` becomes the entropy of a
``numpy.random.SeedSequence``.  Two consequences the rest of the code
relies on:

* the same (master seed, key) always yields the same stream, so any
  subsystem can be replayed in isolation;
* distinct keys yield independent streams, so the order in which
  subsystems happen to draw cannot leak randomness between them.
"""

from __future__ import annotations

import hashlib

import numpy as np

KeyPart = int | str


def _encode(part: KeyPart) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    digest = hashlib.sha256(part.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(master_seed: int, *key: KeyPart) -> np.random.Generator:
    """Return the Generator for the given master seed and stream key."""
    entropy = (int(master_seed),) + tuple(_encode(p) for p in key)
    return np.random.default_rng(np.random.SeedSequence(entropy))


class StreamFactory:
    """Convenience handle binding a master seed: ``factory.stream(*key)``."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)

    def stream(self, *key: KeyPart) -> np.random.Generator:
        return derive_rng(self.master_seed, *key)
