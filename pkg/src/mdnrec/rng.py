"""Deterministic named random substreams derived from one experiment seed.

Every source of randomness (embedding training, parameter init, epoch
shuffling, dataset splitting, synthetic generation) draws from its own named
stream so adding draws to one stage never perturbs another.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))
