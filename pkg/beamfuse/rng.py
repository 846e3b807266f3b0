"""Seeded random streams shared by model and corpus generation.

Values are derived from the raw 64-bit output of ``numpy.random.PCG64``
rather than from ``Generator`` distribution methods, whose algorithms may
change between numpy releases. Uniform draws keep the top 24 bits so each
value is exact in binary32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

UNIFORM_BITS = 24
_UNIFORM_SCALE = 2.0**-UNIFORM_BITS
CHUNK = 1 << 20


@dataclass
class SeededStream:
    """Deterministic stream of uniforms in [0, 1)."""

    seed: int
    _bit_generator: np.random.PCG64 = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        self._bit_generator = np.random.PCG64(self.seed)

    def uniform(self, count: int) -> np.ndarray:
        """Return ``count`` float64 uniforms (exact in float32)."""
        out = np.empty(count, dtype=np.float64)
        for start in range(0, count, CHUNK):
            stop = min(start + CHUNK, count)
            raw = self._bit_generator.random_raw(stop - start)
            out[start:stop] = (raw >> np.uint64(64 - UNIFORM_BITS)).astype(
                np.float64) * _UNIFORM_SCALE
        return out

    def weights(self, count: int, scale: float) -> np.ndarray:
        """Return float32 values uniform in [-scale, scale)."""
        return ((self.uniform(count) * 2.0 - 1.0) * scale).astype(np.float32)

    def geometric(self, count: int, mean: float, cap: int) -> List[int]:
        """Return lengths >= 1 with the given mean, clipped to ``cap``."""
        if mean <= 1.0:
            raise ValueError(f"mean length must exceed 1, got {mean}")
        log_q = math.log(1.0 - 1.0 / mean)
        lengths = []
        for u in self.uniform(count).tolist():
            length = 1 + int(math.floor(math.log(1.0 - u) / log_q))
            lengths.append(min(length, cap))
        return lengths

    def integers(self, count: int, low: int, high: int) -> List[int]:
        """Return ints uniform in [low, high)."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        span = high - low
        return [
            low + min(int(u * span), span - 1)
            for u in self.uniform(count).tolist()
        ]
