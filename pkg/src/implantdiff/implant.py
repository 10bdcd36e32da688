"""Implant extraction and ensemble statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .voxel import BINARY, REAL, VoxelGrid, binary_opening, boolean_subtract, check_compatible, median_filter3

OPENING_RADIUS = 1


def generate_implant(s_c: VoxelGrid, s_d: VoxelGrid, opening_radius: int = OPENING_RADIUS) -> VoxelGrid:
    """Completed minus defective, cleaned by a majority filter and an opening.

    The majority filter can fill pinholes, so the cleaned mask is clipped back
    to the raw difference to keep the implant inside it.
    """
    raw = boolean_subtract(s_c, s_d)
    cleaned = binary_opening(median_filter3(raw), opening_radius)
    return raw.like(cleaned.values & raw.values, BINARY)


@dataclass
class EnsembleStats:
    n: int
    mean: VoxelGrid
    variance: VoxelGrid
    mean_implant: VoxelGrid


def ensemble_stats(implants: Sequence[VoxelGrid]) -> EnsembleStats:
    """Voxel-wise mean, population variance and the >= 0.5 majority implant."""
    if len(implants) == 0:
        raise ValueError("ensemble is empty")
    first = implants[0]
    for other in implants[1:]:
        check_compatible(first, other)
    stack = np.stack([g.values.astype(np.float64) for g in implants])
    n = len(implants)
    mean = stack.sum(axis=0) / n
    variance = np.maximum((stack**2).sum(axis=0) / n - mean**2, 0.0)
    return EnsembleStats(
        n=n,
        mean=first.like(mean, REAL),
        variance=first.like(variance, REAL),
        mean_implant=first.like((mean >= 0.5).astype(np.uint8), BINARY),
    )
