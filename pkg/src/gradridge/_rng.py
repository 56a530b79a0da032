"""Seeded random streams.

All randomness goes through numpy's Philox4x64 counter-based generator so that
streams are reproducible and independent per ``(seed, *keys)``.
"""

import numpy as np

PRNG_NAME = "numpy.Philox4x64-10"


def make_rng(seed, *keys) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))
