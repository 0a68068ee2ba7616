"""Deterministic random streams.

A :class:`RandomSource` is a ``(seed, stream_id)`` pair mapped onto the
128-bit key of numpy's counter-based Philox generator, so a given pair yields
the same draws on every platform and distinct stream ids give independent
streams.
"""
from dataclasses import dataclass

import numpy as np

_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RandomSource:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= int(v) <= _MASK:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v}")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def stream(self, stream_id: int) -> "RandomSource":
        return RandomSource(self.seed, stream_id)


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, a RandomSource, or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RandomSource):
        return rng.generator()
    if rng is None:
        raise TypeError("a random source is required")
    return RandomSource(int(rng)).generator()
