"""Named, splittable, counter-based random streams.

Every stream is a Philox generator keyed by an integer seed plus a tuple of
names, so independent components (exploration, perturbation, per-seed runs)
draw from disjoint streams that do not depend on call order.
"""
from __future__ import annotations

import zlib

import numpy as np


def stream_key(*names: str | int) -> tuple[int, ...]:
    return tuple(n if isinstance(n, int) else zlib.crc32(str(n).encode()) for n in names)


def make_rng(seed: int, *names: str | int) -> np.random.Generator:
    """Return the Philox stream for ``seed`` and the given name path."""
    if seed is None or int(seed) < 0:
        raise ValueError("seed must be a nonnegative integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=stream_key(*names))
    return np.random.Generator(np.random.Philox(ss))
