"""Counter-based random streams."""

from typing import Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence]


def derive_rng(seed: SeedLike, *counters: int) -> np.random.Generator:
    """Generator keyed by (seed, counters...), independent of call order.

    Counters go into the spawn key, so (seed, 0) and (seed, 0, 0) are distinct streams.
    """
    key = tuple(int(c) for c in counters)
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + key))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
