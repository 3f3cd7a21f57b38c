"""Deterministic random-stream derivation.

All stochastic components draw from numpy Generators derived from a base seed
plus an integer path (class index, client id, trial index, ...). Streams are
therefore independent of execution order: two call sites that derive the same
path get the same stream, and reordering work cannot change results.
"""

from __future__ import annotations

import numpy as np

# Stream tags keep unrelated consumers of the same (seed, id...) path apart.
STREAM_SYNTH = 1
STREAM_PARTITION = 2
STREAM_MULTIMEAN = 3
STREAM_NOISE = 4
STREAM_MASK_PHASE1 = 5
STREAM_MASK_PHASE2 = 6
STREAM_ROUND = 7
STREAM_TRIAL = 8


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Return a Generator for `seed` refined by an integer path.

    The path is folded into a SeedSequence entropy list, so distinct paths
    yield statistically independent streams and the mapping is stable across
    platforms and processes.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))
