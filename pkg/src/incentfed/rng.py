"""Keyed, counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(seed, purpose, client, round)``. Two streams with different
keys are statistically independent, and a stream's output does not depend on
which other streams were consumed before it. That makes results independent
of client ordering and thread scheduling.
"""

from __future__ import annotations

import numpy as np

# Stable integer ids for stream purposes; never renumber.
PURPOSES = {
    "profiles": 1,
    "costs": 2,
    "labels": 3,
    "features": 4,
    "model_init": 5,
    "subset": 6,
    "sgd": 7,
    "probe": 8,
    "targets": 9,
}


def stream(seed: int, purpose: str, client: int = 0, round_index: int = 0) -> np.random.Generator:
    """Return the generator for one ``(seed, purpose, client, round)`` key."""
    if purpose not in PURPOSES:
        raise KeyError(f"unknown stream purpose {purpose!r}")
    if seed < 0 or client < 0 or round_index < 0:
        raise ValueError("stream keys must be nonnegative")
    seq = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(PURPOSES[purpose], int(client), int(round_index))
    )
    return np.random.Generator(np.random.Philox(seq))
