"""Counter-based random streams.

A stream is keyed by (seed, stream id) on a Philox generator, so streams can
be split per worker or per iteration without coordination and the draw
sequence does not depend on the platform.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

_MASK64 = (1 << 64) - 1

# fixed stream ids for the components a master seed fans out to
STREAMS = {
    "collect": 1,
    "stitcher": 2,
    "invdyn": 3,
    "reward": 4,
    "depth": 5,
    "planner": 6,
    "flat": 7,
    "pte": 8,
    "eval": 9,
    "refs": 10,
}


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RngStream:
    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = (self.stream << 64) | self.seed
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    @property
    def counter(self) -> int:
        state = self._gen.bit_generator.state["state"]["counter"]
        return int(state[0]) | (int(state[1]) << 64)

    def child(self, index: int) -> "RngStream":
        """Independent stream derived from this stream's key and ``index``."""
        mixed = _splitmix64(self.stream ^ _splitmix64(int(index) + 1))
        return RngStream(self.seed, mixed)

    def named(self, name: str) -> "RngStream":
        return self.child(STREAMS[name])

    def normal(self, shape, dtype=np.float32) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=dtype)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, n: int, size=None, replace: bool = True):
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def gaussian(rng: RngStream, shape, dtype=np.float32) -> Tensor:
    return Tensor(rng.normal(shape, dtype=dtype))
