"""Deterministic random-stream derivation.

Every stochastic entry point in the package takes a seed (int or
``numpy.random.SeedSequence``) instead of a live generator. Sub-streams are
derived functionally from (seed, integer tags), so the same seed always maps
to the same stream regardless of call order, worker count, or how many other
streams were derived in between.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, SeedSequence, default_rng

Seed = int | SeedSequence


def as_seed_sequence(seed: Seed | None) -> SeedSequence:
    if isinstance(seed, SeedSequence):
        return seed
    return SeedSequence(seed)


def derive(seed: Seed | None, *tags: int) -> SeedSequence:
    """Child stream at (seed, *tags); purely functional, never mutates."""
    base = as_seed_sequence(seed)
    return SeedSequence(entropy=base.entropy, spawn_key=tuple(base.spawn_key) + tags)


def generator(seed: Seed | None, *tags: int) -> Generator:
    if tags:
        return default_rng(derive(seed, *tags))
    return default_rng(as_seed_sequence(seed))


def coerce_generator(rng: Generator | Seed | None) -> Generator:
    """Accept either a live generator or seed material."""
    if isinstance(rng, Generator):
        return rng
    return generator(rng)


__all__ = ["Seed", "as_seed_sequence", "derive", "generator", "coerce_generator"]
