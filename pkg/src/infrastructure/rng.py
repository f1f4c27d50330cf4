"""
Named random streams derived from one run seed.

Every consumer (weight init, batch shuffling, each data split) draws from its own
stream, so adding or resizing one consumer never perturbs another.
"""
from typing import List

import numpy as np

INIT = "init"
SHUFFLE = "shuffle"


def data_stream_name(split: str) -> str:
    return f"data/{split}"


def _entropy(seed: int, name: str) -> List[int]:
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    return [int(seed)] + list(name.encode("utf-8"))


def stream(seed: int, name: str) -> np.random.Generator:
    """A fresh generator for (seed, name); equal arguments give identical draws."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_entropy(seed, name))))


class SeedStreams:
    def __init__(self, seed: int):
        self.seed = int(seed)

    def __call__(self, name: str) -> np.random.Generator:
        return stream(self.seed, name)

    def init(self) -> np.random.Generator:
        return stream(self.seed, INIT)

    def shuffle(self) -> np.random.Generator:
        return stream(self.seed, SHUFFLE)

    def data(self, split: str) -> np.random.Generator:
        return stream(self.seed, data_stream_name(split))
