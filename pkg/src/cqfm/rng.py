"""
Random number generation.

All randomness flows through numpy's counter-based Philox bit generator
keyed by a ``SeedSequence``; substreams are addressed by a spawn key so a
(cell, replication) pair always sees the same draws regardless of the
order in which jobs run.
"""

import numpy as np


def make_generator(seed: int, *key: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))
