"""
Random streams - reproducible, counter-based generators keyed by purpose.

Every generator is a numpy ``Philox`` bit generator seeded through
``SeedSequence(entropy=seed, spawn_key=key)``. The key is
``(repetition, stage, purpose[, particle])`` so that a stream never depends
on how many other streams exist or which thread consumes it.
"""

from enum import IntEnum
from typing import Tuple

import numpy as np


class Stage(IntEnum):
    """Stage component of a stream key."""
    TRUTH = 0
    POSTERIOR = 1
    RARE = 2
    BASELINE = 3


class Purpose(IntEnum):
    """Purpose component of a stream key."""
    PARTICLE = 0
    RESAMPLE = 1
    PILOT = 2
    NOISE = 3


def make_generator(seed: int, key: Tuple[int, ...] = ()) -> np.random.Generator:
    """Return a Philox generator for ``seed`` and stream ``key``."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


class RandomStreams:
    """Named streams for one repetition of one experiment."""

    def __init__(self, seed: int, repetition: int = 0) -> None:
        self.seed = int(seed)
        self.repetition = int(repetition)

    def stream(self, stage: Stage, purpose: Purpose, index: int = 0) -> np.random.Generator:
        return make_generator(self.seed, (self.repetition, int(stage), int(purpose), int(index)))

    def particles(self, stage: Stage, n: int) -> list:
        """One generator per particle slot, owned for the whole stage."""
        return [self.stream(stage, Purpose.PARTICLE, p) for p in range(n)]

    def resample(self, stage: Stage) -> np.random.Generator:
        return self.stream(stage, Purpose.RESAMPLE)

    def pilot(self, stage: Stage) -> np.random.Generator:
        return self.stream(stage, Purpose.PILOT)

    def for_repetition(self, repetition: int) -> "RandomStreams":
        return RandomStreams(self.seed, repetition)
