"""Named, seeded random streams.

Every stochastic decision in a run draws from a stream derived from the
run seed and a stream name, so adding draws to one stream never shifts
another. Streams are owned by one engine and never shared.
"""

from __future__ import annotations

import zlib

import numpy as np


class RandomStreams:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            gen = make_generator(self.seed, name)
            self._streams[name] = gen
        return gen


def make_generator(seed: int, name: str) -> np.random.Generator:
    """PCG64 generator for ``(seed, name)``; stable across processes."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=(zlib.crc32(name.encode()),))
    return np.random.Generator(np.random.PCG64(ss))
