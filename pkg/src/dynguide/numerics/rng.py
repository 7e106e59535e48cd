"""Deterministic random streams built on counter-based Philox keys.

Every stream is identified by (seed, domain, index). Draws depend only on that
triple and the order of calls within the stream, never on global state, thread
timing, or how work is batched across chains.
"""

from __future__ import annotations

import numpy as np

# fixed domain labels so call sites cannot drift apart silently
DOMAIN_DATA = 1
DOMAIN_INIT = 2
DOMAIN_TRAIN = 3
DOMAIN_SAMPLER = 4
DOMAIN_EVAL = 5
DOMAIN_LATENT = 6

_MAX_DOMAIN = 1 << 16
_MAX_INDEX = 1 << 48


class Rng:
    """One reproducible stream keyed by (seed, domain, index)."""

    algorithm = "philox4x64"

    def __init__(self, seed: int, domain: int = 0, index: int = 0):
        if not 0 <= seed < (1 << 64):
            raise ValueError(f"seed out of range: {seed}")
        if not 0 <= domain < _MAX_DOMAIN:
            raise ValueError(f"domain out of range: {domain}")
        if not 0 <= index < _MAX_INDEX:
            raise ValueError(f"index out of range: {index}")
        self.seed = int(seed)
        self.domain = int(domain)
        self.index = int(index)
        key = (self.seed << 64) | (self.domain << 48) | self.index
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def derive(self, domain: int, index: int = 0) -> "Rng":
        """Fresh stream for the same experiment seed."""
        return Rng(self.seed, domain, index)

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(mean, std, size=shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size, p=None, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, p=p, replace=replace)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, domain={self.domain}, index={self.index})"
