"""Counter-based random streams.

Every stream is a ``numpy`` Philox generator keyed by a SeedSequence built
from integers, so results depend only on the key and never on the order in
which runs execute.  Experiments key their runs by ``(crc32(experiment), seed)``.
"""
from __future__ import annotations

import zlib
from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int]]


def entropy(seed: SeedLike) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(x) for x in seed)


def stream(seed: SeedLike, *purpose: int) -> np.random.Generator:
    """Independent generator for ``seed`` and a sub-stream tag."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy(seed) + purpose)))


def run_key(experiment: str, seed: int) -> tuple[int, int]:
    return (zlib.crc32(experiment.encode("utf-8")), int(seed))
