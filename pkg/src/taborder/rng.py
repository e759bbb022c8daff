"""Seeding helpers.

All randomness flows through numpy's Philox counter-based generator so that
substreams can be derived by key, independent of scheduling: stream (master, k)
is `Philox(key=hash128(master, k))` via `spawn_key`. Seeds are recorded in every
output artifact.
"""

from __future__ import annotations

import numpy as np


def generator(seed):
    """Root generator for a master seed."""
    return np.random.Generator(np.random.Philox(seed))


def substream(seed, *key):
    """Independent generator for (master seed, key...), order-insensitive to scheduling."""
    return np.random.Generator(np.random.Philox(key=np.random.SeedSequence([seed, *key]).generate_state(2, np.uint64)))
