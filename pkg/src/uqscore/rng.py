"""Seed derivation.

Each consumer asks for a generator keyed by ``(master_seed, *labels)``. The
labels are hashed into the spawn key of a :class:`numpy.random.SeedSequence`,
so the stream a grid cell sees does not depend on which worker runs it or in
what order.
"""
import hashlib
import os

import numpy as np

SEED_ENV = "UQSCORE_SEED"


def _label_words(label) -> tuple[int, ...]:
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))


def seed_sequence(master_seed: int, *labels) -> np.random.SeedSequence:
    key: tuple[int, ...] = ()
    for label in labels:
        key += _label_words(label)
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)


def derive_rng(master_seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, *labels)))


def derive_seed(master_seed: int, *labels) -> int:
    """A 63-bit integer seed, for places that store a seed rather than a stream."""
    return int(seed_sequence(master_seed, *labels).generate_state(2, np.uint32).view(np.uint64)[0] >> 1)


def default_seed(fallback: int = 0) -> int:
    value = os.environ.get(SEED_ENV)
    return int(value) if value not in (None, "") else fallback
