"""Seeded random streams.

Every stochastic step draws from a Philox (counter-based) generator so that a
run is reproducible from its integer seed alone.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def member_seed(seed: int, member: int) -> int:
    """Seed of the ``member``-th ensemble draw; independent of evaluation order."""
    return int(seed) + int(member)
