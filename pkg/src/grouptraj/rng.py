"""Counter-based random streams.

Every stochastic draw in the project goes through an ``RngStream`` so that a
(seed, counter) pair pins down the exact sequence of numbers on any platform.
Each draw hashes (seed, counter) through ``numpy.random.SeedSequence`` and
advances the counter, so streams can be serialized, replayed, or forked
without sharing mutable generator state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

# Gumbel noise is computed from uniforms clipped into (EPS, 1 - EPS) so the
# double logarithm stays finite.
GUMBEL_EPS = 1e-12

_MASK64 = (1 << 64) - 1


@dataclass
class RngStream:
    seed: int
    counter: int = 0

    def _next(self) -> np.random.Generator:
        ss = np.random.SeedSequence((self.seed & _MASK64, self.counter & _MASK64))
        self.counter += 1
        return np.random.Generator(np.random.PCG64(ss))

    def uniform(self, size=()) -> np.ndarray:
        """Uniform float64 draws in [0, 1)."""
        return self._next().random(size, dtype=np.float64)

    def normal(self, size=()) -> np.ndarray:
        return self._next().standard_normal(size, dtype=np.float64)

    def gumbel(self, size=()) -> np.ndarray:
        """Standard Gumbel(0, 1) noise, -ln(-ln(u)) with clipped u."""
        u = np.clip(self.uniform(size), GUMBEL_EPS, 1.0 - GUMBEL_EPS)
        return -np.log(-np.log(u))

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._next().integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._next().permutation(n)

    def derive(self, *tags) -> "RngStream":
        """Fork an independent stream keyed by string or integer tags.

        The child's sequence is unrelated to the parent's and does not
        consume parent counter state beyond this call.
        """
        words = []
        for t in tags:
            if isinstance(t, str):
                digest = hashlib.md5(t.encode("utf-8")).digest()
                words.append(int.from_bytes(digest[:8], "little"))
            else:
                words.append(int(t) & _MASK64)
        ss = np.random.SeedSequence((self.seed & _MASK64, 0x9E3779B9, *words))
        child_seed = int(ss.generate_state(1, dtype=np.uint64)[0])
        return RngStream(seed=child_seed)
