"""Seed streams.

Every stochastic unit of work draws from its own generator, derived from the
master seed and a key path such as ``("chain", partition_id)``. Streams are
independent of the order in which work is scheduled.
"""

import hashlib

import numpy as np

MAX_SEED = 2**64 - 1


def _key_words(keys: tuple[object, ...]) -> tuple[int, ...]:
    words: list[int] = []
    for key in keys:
        if isinstance(key, (int, np.integer)) and not isinstance(key, bool) and 0 <= int(key) < 2**32:
            words.append(int(key))
        else:
            digest = hashlib.sha256(repr(key).encode("utf-8")).digest()
            words.append(int.from_bytes(digest[:4], "little"))
    return tuple(words)


def seed_sequence(seed: int, *keys: object) -> np.random.SeedSequence:
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"Seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.SeedSequence(int(seed), spawn_key=_key_words(keys))


def stream(seed: int, *keys: object) -> np.random.Generator:
    """Generator for the unit of work named by ``keys``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys)))


def derive_seed(seed: int, *keys: object) -> int:
    """A 64-bit master seed for a nested unit of work (e.g. one holdout fold)."""
    words = seed_sequence(seed, *keys).generate_state(2, dtype=np.uint32)
    return int(words[0]) | (int(words[1]) << 32)
