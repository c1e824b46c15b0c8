"""Counter-based random streams keyed by (seed, replicate, stream, t).

Every time index owns one Philox counter block (four 64-bit words), so the
draws for a given ``t`` never depend on which other indices were requested
before it, in which chunks, or on which thread.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Philox, SeedSequence

WORDS_PER_STEP = 4
_COUNTER_OFFSET = 1 << 63  # lets t run negative (backward compositions)
_MASK64 = (1 << 64) - 1


class CounterStream:
    """Deterministic per-time-index uniforms.

    Parameters
    ----------
    seed : int
        Any integer; reduced modulo 2**64.
    replicate : int
        Replicate index, giving an independent stream for parallel runs.
    stream : int
        Sub-stream tag for models that need more than one noise source.
    """

    __slots__ = ("seed", "replicate", "stream", "_key")

    def __init__(self, seed: int, replicate: int = 0, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.replicate = int(replicate)
        self.stream = int(stream)
        if self.replicate < 0 or self.stream < 0:
            raise ValueError("replicate and stream must be non-negative")
        self._key = SeedSequence([self.seed, self.replicate, self.stream]).generate_state(
            2, dtype=np.uint64
        )

    def raw(self, t_start: int, t_stop: int) -> np.ndarray:
        """Raw 64-bit words, shape ``(t_stop - t_start, 4)``."""
        n = int(t_stop) - int(t_start)
        if n < 0:
            raise ValueError("t_stop must be >= t_start")
        if n == 0:
            return np.empty((0, WORDS_PER_STEP), dtype=np.uint64)
        bitgen = Philox(key=self._key, counter=_COUNTER_OFFSET + int(t_start))
        return bitgen.random_raw(WORDS_PER_STEP * n).reshape(n, WORDS_PER_STEP)

    def uniforms(self, t_start: int, t_stop: int) -> np.ndarray:
        """Uniforms on the open interval (0, 1), shape ``(n, 4)``."""
        words = self.raw(t_start, t_stop)
        return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def __repr__(self) -> str:
        return f"CounterStream(seed={self.seed}, replicate={self.replicate}, stream={self.stream})"
