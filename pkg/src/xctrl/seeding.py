"""Schedule-independent seed derivation."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: object) -> int:
    """Hash ``parts`` to a 63-bit seed.

    Used everywhere a task (bin, replicate, restart, inning) needs its own
    RNG stream, so results do not depend on the order tasks run in.
    """
    digest = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def rng_for(*parts: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
