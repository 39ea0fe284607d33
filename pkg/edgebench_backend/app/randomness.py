"""Seeded random streams.

Every consumer of randomness draws from its own stream, and every stream is
split per slot, so a draw depends only on (seed, stream, slot) and the
position of the value inside the draw. Adding a consumer or skipping one
never shifts the numbers another consumer sees.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    PLACEMENT = 0
    ARRIVALS = 1
    CHANNELS = 2
    POLICY = 3


class RandomStreams:
    def __init__(self, seed: int):
        self.seed = int(seed)

    def generator(self, stream: Stream, slot: int = 0) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(int(stream), int(slot)))
        return np.random.Generator(np.random.Philox(seq))

    def __repr__(self):
        return f"RandomStreams(seed={self.seed})"
