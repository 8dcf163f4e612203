"""Seeded random state with named, mutually independent streams.

All randomness in a run flows through one :class:`RngState` built from a single
64-bit seed. Each consumer draws from its own named stream (``"init"``,
``"dropout"``, ``"shuffle"``, ...) backed by a counter-based Philox generator,
so adding draws to one stream never perturbs the sequence of another. The same
seed and the same per-stream call sequence reproduce bit-identical values.
"""

from __future__ import annotations

import zlib

import numpy as np

ALGORITHM = "philox4x64"


class RngState:
    """Deterministic random source keyed by (seed, stream name)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        """Return the generator for ``name``, creating it on first use.

        The stream key mixes the run seed with a CRC of the name, so streams
        with different names are statistically independent Philox instances.
        """
        gen = self._streams.get(name)
        if gen is None:
            key = np.array([self.seed, zlib.crc32(name.encode())], dtype=np.uint64)
            gen = np.random.Generator(np.random.Philox(key=key))
            self._streams[name] = gen
        return gen

    def spawn(self, salt: int) -> "RngState":
        """Derive an independent state, e.g. for a sub-experiment."""
        return RngState((self.seed * 0x9E3779B97F4A7C15 + salt) & 0xFFFFFFFFFFFFFFFF)

    def __repr__(self):
        return f"RngState(seed={self.seed}, algorithm={ALGORITHM!r})"
