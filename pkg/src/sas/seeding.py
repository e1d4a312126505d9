"""Root-seed expansion: every random stream is keyed by (root seed, purpose, ...)."""
from __future__ import annotations

import enum

import numpy as np


class Purpose(enum.IntEnum):
    SHUFFLE = 1
    SELECT = 2
    COLD_START = 3
    SAMPLE = 4
    INIT = 5
    DROPOUT = 6
    CORPUS = 7
    ORACLE = 8
    EVAL = 9
    PROBE = 10
    GRADCHECK = 11


def rng_for(seed: int, purpose: Purpose, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(purpose), *(int(k) for k in keys)])
