"""
Seed splitting for reproducible Monte Carlo.

Sample ``i`` under master seed ``s`` always draws from
``Philox(SeedSequence(entropy=s, spawn_key=(i,)))``, so a path does not depend on
batch size, thread count or which other paths were simulated.
"""

from typing import Optional

import numpy as np

SEED_MAX = 2 ** 64


def validate_seed(seed: int) -> int:
    """Return seed as int or raise ValueError if it is not a 64-bit non-negative value"""
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ValueError(f"seed must be an integer, got {type(seed).__name__}")
    seed = int(seed)
    if not 0 <= seed < SEED_MAX:
        raise ValueError(f"seed must satisfy 0 <= seed < 2**64, got {seed}")
    return seed


def path_generator(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """
    Counter-based generator for sample ``index`` under ``seed``.

    Args:
        seed: Master seed
        index: Path or sample index
        stream: Sub-stream for a second independent use of the same index
            (for example, the second branch of a two-branch construction)
    """
    spawn_key = (int(index),) if stream == 0 else (int(index), int(stream))
    ss = np.random.SeedSequence(entropy=validate_seed(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))


class UniformStream:
    """
    Buffered uniforms for one sample.

    Draws blocks of ``block_size`` doubles at a time; the sequence of values is
    identical whatever the block size since Philox is consumed in order.
    """

    def __init__(self, seed: int, index: int, block_size: int = 1024, stream: int = 0):
        self.seed = seed
        self.index = index
        self._gen = path_generator(seed, index, stream)
        self._block_size = block_size
        self._buf: Optional[np.ndarray] = None
        self._pos = 0

    def next(self) -> float:
        if self._buf is None or self._pos >= self._buf.size:
            self._buf = self._gen.random(self._block_size)
            self._pos = 0
        value = float(self._buf[self._pos])
        self._pos += 1
        return value

    def take(self, n: int) -> np.ndarray:
        """Next ``n`` uniforms as an array"""
        return np.fromiter((self.next() for _ in range(n)), dtype=float, count=n)
