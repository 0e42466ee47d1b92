"""Named random streams so components can be re-seeded independently.

Every source of randomness derives its generator from (run seed, stream id,
index), which keeps runs reproducible while letting e.g. the detector noise
be varied without disturbing the scenario layout.
"""
from __future__ import annotations

import numpy as np

SCENARIO = 1
DETECTOR = 2
SAMPLER = 3
TRAINING = 4
GNSS = 5
DEPTH = 6
CORPUS = 7


def rng_for(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(stream), int(index))))


def derived_seed(seed: int, stream: int, index: int = 0) -> int:
    """Stable 63-bit child seed for APIs that take a plain integer."""
    ss = np.random.SeedSequence((int(seed), int(stream), int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)
