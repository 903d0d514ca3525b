"""Counter-based random streams derived from one master seed.

Every random draw in a run comes from a generator keyed by
``(iteration, purpose, index)``, so serial and parallel execution, and a run
resumed from a checkpoint, all see the same numbers.
"""

from __future__ import annotations

import numpy as np

_RUN, _TRAVERSE, _SPLIT, _MISC = 0, 1, 2, 3


class Streams:
    def __init__(self, seed: int):
        self.seed = int(seed)

    def _gen(self, *key) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=key)))

    def run(self, iteration: int, index: int) -> np.random.Generator:
        return self._gen(iteration, _RUN, index)

    def traverse(self, iteration: int) -> np.random.Generator:
        return self._gen(iteration, _TRAVERSE)

    def split(self, iteration: int) -> np.random.Generator:
        return self._gen(iteration, _SPLIT)

    def misc(self, *key) -> np.random.Generator:
        return self._gen(_MISC, *key)
