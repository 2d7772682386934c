"""Deterministic RNG derivation.

All stochastic code derives a fresh generator from (master seed, stream
tags); nothing shares mutable RNG state across concerns. Because every
episode's streams are a pure function of (seed, episode), resuming a run
needs no RNG serialization.
"""

from __future__ import annotations

import numpy as np


def seed_list(seed, *tags) -> list[int]:
    parts = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return [int(p) for p in parts] + [int(t) for t in tags]


def rng_from(seed, *tags) -> np.random.Generator:
    return np.random.default_rng(seed_list(seed, *tags))
