"""
Seedable random streams.

``Rng`` wraps numpy's PCG64 bit generator. A stream is identified by
``(seed, stream)`` where ``stream`` is a tuple of non-negative ints fed to
``numpy.random.SeedSequence`` as its spawn key, so ``Rng(7).child(3, 1)`` and
``Rng(7, (3, 1))`` are the same stream and independent of every other key.
Identical keys give bit-identical draws on every platform numpy supports.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .exceptions import ConfigError

# Well-known top-level stream ids. Keeping them in one place stops two
# subsystems from drawing from the same stream by accident.
STREAM_INIT = 0
STREAM_CORPUS = 1
STREAM_SPLIT = 2
STREAM_TRAIN_PAIRS = 3
STREAM_VALID_PAIRS = 4
STREAM_SHUFFLE = 5
STREAM_PROBE = 6
STREAM_EXPORT = 7
STREAM_EVAL = 8


class Rng:
    """A PCG64 stream addressed by ``(seed, stream)``."""

    def __init__(self, seed: int, stream: Sequence[int] = ()) -> None:
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.stream = tuple(int(k) for k in stream)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.stream)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def child(self, *keys: int) -> Rng:
        """Independent sub-stream ``stream + keys``; does not advance ``self``."""
        return Rng(self.seed, self.stream + tuple(keys))

    def random(self) -> float:
        return float(self.generator.random())

    def uniform(self, low: float, high: float) -> float:
        return float(self.generator.uniform(low, high))

    def integer(self, high: int) -> int:
        """Uniform integer in ``[0, high)``."""
        return int(self.generator.integers(0, high))

    def choice(self, n: int, size: int, replace: bool = False) -> list[int]:
        """``size`` indices from ``range(n)``, in draw order."""
        return [int(i) for i in self.generator.choice(n, size=size, replace=replace)]

    def permutation(self, n: int) -> list[int]:
        return [int(i) for i in self.generator.permutation(n)]

    def normal(self, shape: Sequence[int], std: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, std, size=tuple(shape))

    def standard_gamma(self, shape_param: float) -> float:
        """One Gamma(k, 1) draw (numpy's Marsaglia–Tsang squeeze sampler)."""
        return float(self.generator.standard_gamma(shape_param))


def beta_sample(alpha: float, beta: float, rng: Rng) -> float:
    """
    One draw from Beta(alpha, beta).

    Uses the Gamma ratio X / (X + Y) with X ~ Gamma(alpha), Y ~ Gamma(beta),
    both drawn by the Marsaglia–Tsang method, in that order from ``rng``.
    """
    if not alpha > 0 or not beta > 0:
        raise ConfigError(f"Beta parameters must be positive, got ({alpha}, {beta})")
    x = rng.standard_gamma(alpha)
    y = rng.standard_gamma(beta)
    if x + y == 0.0:
        # Both draws underflowed (tiny shape parameters); fall back to the
        # Bernoulli limit with mean alpha / (alpha + beta).
        return 1.0 if rng.random() < alpha / (alpha + beta) else 0.0
    return x / (x + y)
