"""Seeded random streams.

Every stochastic component takes a ``numpy.random.Generator``. Independent
streams are derived from a master seed plus an integer key (path index, segment
index, ...) through ``SeedSequence`` spawn keys, so results never depend on the
order in which streams are consumed.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """PCG64 generator for stream ``key`` under master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A 63-bit integer seed for stream ``key``; recorded in run manifests."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
