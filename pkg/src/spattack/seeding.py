"""Deterministic random substreams.

Every consumer of randomness gets its own generator derived from
``(seed, stream, *keys)``, so results never depend on call order or on how
work is split across workers.
"""
from __future__ import annotations

import enum

import numpy as np


class Stream(enum.IntEnum):
    INIT_USERS = 1
    INIT_ITEMS = 2
    TRAIN_NEGATIVES = 3
    EVAL_NEGATIVES = 4
    ATTACK = 5
    POISON_LISTS = 6
    SYNTHETIC = 7
    MALICIOUS_INIT = 8


def substream(seed: int, stream: Stream | int, *keys: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, stream, *keys)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), *map(int, keys)))
    return np.random.Generator(np.random.PCG64(ss))
