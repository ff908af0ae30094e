import logging
from typing import Optional, Tuple

import numpy as np
import torch

logger = logging.getLogger(__name__)

# Stream purposes; children of a run seed are keyed by these so stages never share draws.
SHUFFLE = 0
AUGMENT = 1
INIT = 2
QUEUE = 3
BANK = 4
EVAL = 5
SUBSET = 6
FINETUNE = 7
SYNTH = 8


class RngStream:
    """Seeded, splittable random stream.

    A stream is identified by (seed, key). `split` derives an independent child
    keyed by extra integers, so per-epoch, per-step and per-sample streams can be
    recomputed on resume without storing generator state. `counter` tracks how
    many draws were taken from this stream.
    """

    def __init__(self, seed: int, key: Tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self.counter = 0
        self._generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=self.key))
        )

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key}, counter={self.counter})"

    def split(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(ids))

    def random(self) -> float:
        self.counter += 1
        return float(self._generator.random())

    def uniform(self, low: float, high: float, size=None):
        self.counter += 1
        value = self._generator.uniform(low, high, size)
        return float(value) if size is None else value

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)"""
        self.counter += 1
        value = self._generator.integers(low, high, size)
        return int(value) if size is None else value

    def normal(self, scale: float = 1.0, size=None) -> np.ndarray:
        self.counter += 1
        return self._generator.normal(0.0, scale, size)

    def choice(self, n: int, size: int) -> np.ndarray:
        """size distinct indices from range(n)"""
        self.counter += 1
        return self._generator.choice(n, size=size, replace=False)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += 1
        return self._generator.permutation(n)

    def torch_generator(self) -> torch.Generator:
        """A torch generator seeded from this stream (one draw)"""
        self.counter += 1
        generator = torch.Generator()
        generator.manual_seed(int(self._generator.integers(0, 2 ** 63 - 1)))
        return generator


def as_stream(rng: Optional[RngStream], seed: int = 0) -> RngStream:
    return rng if rng is not None else RngStream(seed)
