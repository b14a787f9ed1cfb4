"""Seeded random number streams.

All randomness in the package flows through Philox4x64-10 counter-based
generators keyed by ``(seed, stream)``.  Distinct stream ids give
statistically independent streams from one user-facing seed, so per-image
generation, parameter initialization, and batch shuffling never interact.
The algorithm is fixed (not numpy's default) so that identical seeds
reproduce identical artifacts across platforms and numpy versions.
"""

from __future__ import annotations

import numpy as np

# Reserved stream ids.  Image streams use the image index directly, so
# non-image streams live at the top of the 64-bit space.
STREAM_SETUP = 2**64 - 1
STREAM_INIT = 2**64 - 2
STREAM_SHUFFLE = 2**64 - 3


def make_rng(seed: int, stream: int = STREAM_SETUP) -> np.random.Generator:
    """Return a generator for the given (seed, stream) pair."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
