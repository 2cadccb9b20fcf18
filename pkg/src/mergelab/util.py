"""Seeding: every random draw flows from one master seed through named streams."""

from __future__ import annotations

import numpy as np

# stream purposes; combined with the master seed and further indices
SCENE = 1
POLICY = 2
TRAIN = 3
DEMO = 4
EVAL = 5
VERIFY = 6


def rng_stream(*ids: int) -> np.random.Generator:
    """Independent generator for (master seed, purpose, indices...)."""
    return np.random.default_rng(np.random.SeedSequence([int(i) for i in ids]))
