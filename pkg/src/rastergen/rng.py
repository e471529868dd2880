"""Counter-based pseudo-random stream used everywhere sampling must be replayable.

Draw ``k`` of a stream seeded with ``s`` is ``mix64(s + (k + 1) * GAMMA)`` where
``mix64`` is the splitmix64 finalizer and GAMMA its canonical odd increment.
A stream is therefore a pure function of ``(seed, counter)``: any draw can be
recomputed in isolation, and two streams with the same seed always agree.
Uniforms take the top 53 bits, giving doubles in [0, 1).

The exact constants and bit movements are part of the on-disk story (seeds are
recorded in run configs and token files), so they are documented in FORMATS.md
and must not change.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(x: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    x &= _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def row_seed(seed: int, row: int) -> int:
    """Per-row stream seed: base seed XOR row index."""
    return (seed ^ row) & _MASK


class CounterRng:
    """Replayable uniform stream over a 64-bit counter.

    ``uniform()`` consumes one counter; ``uniforms(n)`` consumes ``n``.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self.counter = 0

    def _u64(self, k: int) -> int:
        return mix64(self.seed + ((k + 1) * _GAMMA & _MASK))

    def uniform(self) -> float:
        v = self._u64(self.counter)
        self.counter += 1
        return (v >> 11) * 2.0**-53

    def uniforms(self, n: int) -> np.ndarray:
        # vectorized replay of n scalar draws; uint64 arithmetic wraps like the
        # scalar path masks
        ks = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        z = np.uint64(self.seed) + ks * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
        self.counter += n
        return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError(f"randint bound must be positive, got {n}")
        return min(int(self.uniform() * n), n - 1)

    def normals(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller; consumes 2*ceil(n/2) uniforms."""
        m = (n + 1) // 2
        u1 = self.uniforms(m)
        u2 = self.uniforms(m)
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        out = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return out[:n]
