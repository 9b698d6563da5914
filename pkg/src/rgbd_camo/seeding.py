"""Named random sub-streams derived from one integer seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, *names: str | int) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFF]
    for n in names:
        words.append(n & 0xFFFFFFFF if isinstance(n, int) else zlib.crc32(str(n).encode()))
    return np.random.default_rng(np.random.SeedSequence(words))
