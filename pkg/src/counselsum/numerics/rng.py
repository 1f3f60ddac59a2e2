"""Seeded deterministic random numbers shared by every stochastic component."""

from __future__ import annotations

import hashlib

import numpy as np


class Rng:
    """Thin wrapper around PCG64 with named, reproducible substreams.

    Identical seeds yield identical streams on every platform; substreams
    derived via `child` are independent of draw order on the parent.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, key: str) -> "Rng":
        digest = hashlib.sha256(f"{self.seed}:{key}".encode("utf-8")).digest()
        return Rng(int.from_bytes(digest[:8], "little"))

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def choice_index(self, weights) -> int:
        """Sample an index proportional to `weights` (need not sum to 1)."""
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if total <= 0:
            raise ValueError("choice_index requires positive total weight")
        return int(np.searchsorted(np.cumsum(w / total), self._gen.uniform()))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
