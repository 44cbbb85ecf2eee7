"""Deterministic random-stream management.

A single root seed fans out into named substreams so that independent
consumers (weight init, dropout, shuffling, data synthesis) draw from
isolated generators. Changing how one consumer uses randomness never
perturbs the draws another consumer sees, which keeps controlled
comparisons between pipeline variants honest.
"""
from __future__ import annotations

import zlib

import numpy as np


class SeedHub:
    """Fans a root seed out into independent named generator streams."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def stream(self, name: str, *extra: int) -> np.random.Generator:
        """Return a fresh generator for the substream ``name``.

        Equal (seed, name, extra) always yields the same stream; distinct
        names yield statistically independent streams.
        """
        key = [self.seed, zlib.crc32(name.encode("utf-8"))]
        key.extend(int(e) for e in extra)
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
