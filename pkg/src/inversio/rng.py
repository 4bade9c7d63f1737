"""Deterministic random-stream plumbing.

A stream is identified by the pair (seed, stream_id).  The same pair
always reproduces the same draws, no matter how many other streams are
consumed concurrently, which makes chunked Monte Carlo runs mergeable
in any order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Seeded, replayable source of numpy generators."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)):
            raise InvalidArgumentError("seed must be an integer")
        if not isinstance(self.stream_id, (int, np.integer)):
            raise InvalidArgumentError("stream_id must be an integer")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of the stream."""
        ss = np.random.SeedSequence([int(self.seed) & _MASK64, int(self.stream_id) & _MASK64])
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, k: int) -> "RngStream":
        """Derived stream, deterministic in (seed, stream_id, k).

        Children of distinct (stream_id, k) pairs are distinct because the
        mapping below is injective for 0 <= k < 2**20.
        """
        if k < 0:
            raise InvalidArgumentError("child index must be nonnegative")
        return RngStream(self.seed, (int(self.stream_id) << 20) + k + 1)


def worker_count() -> int:
    """Worker cap from INVERSIO_THREADS (default 1, minimum 1)."""
    raw = os.environ.get("INVERSIO_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)
