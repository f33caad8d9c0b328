"""Seeded random streams.

Replication ``i`` of a run seeded with ``seed`` always draws from the PCG64
stream of ``SeedSequence(seed, spawn_key=(i,))``, so results do not depend on
how replications are distributed over workers.
"""
from __future__ import annotations

import numpy as np

RNG_NAME = "numpy.random.PCG64 via SeedSequence(seed, spawn_key=(replication,))"


def make_rng(seed: int, replication: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(replication),))
    return np.random.Generator(np.random.PCG64(seq))
