"""Named random streams.

Every consumer of randomness derives its generator from the master seed plus
a fixed stream tag and any number of integer keys (epoch, step, fold, ...).
Streams never share state, so the order in which they are created or used
does not affect what they produce.
"""
from __future__ import annotations

import numpy as np

INIT = 1
SHUFFLE = 2
MIX = 3
FOLD = 4
NOISE = 5
PLAN = 6
DATA = 7
TEST_DATA = 8
RISK_MIX = 9
RISK_SEL = 10


def stream(seed: int, tag: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, tag, *map(int, keys)])


def derive_seed(seed: int, tag: int, *keys: int) -> int:
    """A 63-bit integer seed for APIs that take a plain int."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, tag, *map(int, keys)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
