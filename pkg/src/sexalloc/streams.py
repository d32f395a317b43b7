"""Reproducible random streams keyed by (master seed, cell, replicate, ...)."""

from __future__ import annotations

import numpy as np


def seed_sequence(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the given key; identical keys give identical streams."""
    return np.random.default_rng(seed_sequence(seed, *key))
