"""Reproducible random-number streams.

Every stochastic routine in the package draws from a Philox (counter-based)
generator whose stream is addressed by a root seed plus an integer key path,
e.g. ``(seed; m, row)`` for imputation copy ``m`` of a given data row.  Streams
with distinct key paths are statistically independent, so work can be
reordered or parallelized without changing results: the draw for (m, row)
never depends on which other rows were imputed first.

The derivation uses :class:`numpy.random.SeedSequence` spawn keys, which is
the documented numpy mechanism for building independent child streams.
"""

from __future__ import annotations

import numpy as np

SeedLike = int | np.random.SeedSequence


def seed_sequence(seed: SeedLike, *key: int) -> np.random.SeedSequence:
    """Return the seed sequence at key path ``key`` under ``seed``.

    An integer seed is the root; a SeedSequence is extended, so
    ``seed_sequence(seed_sequence(s, a), b) == seed_sequence(s, a, b)``.
    """
    if isinstance(seed, np.random.SeedSequence):
        base = seed.entropy
        prefix = tuple(seed.spawn_key)
    else:
        base = int(seed)
        prefix = ()
    return np.random.SeedSequence(entropy=base, spawn_key=prefix + tuple(int(k) for k in key))


def stream(seed: SeedLike, *key: int) -> np.random.Generator:
    """Generator on the Philox stream addressed by ``(seed; *key)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *key)))


def derive_seed(seed: SeedLike, *key: int) -> int:
    """Collapse a stream address into a plain 64-bit integer seed.

    Used where a config field or report must echo a single integer.
    """
    state = seed_sequence(seed, *key).generate_state(2, dtype=np.uint64)
    return int(state[0] ^ (state[1] >> 1))
