"""Overlap and surface-distance metrics for binary volumes.

Surfaces are the 6-connected boundary voxels of a mask: foreground voxels
with a background face neighbour or lying on the volume edge. Distances are
between voxel centres, in mm.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .voxel import VoxelGrid, check_compatible

DEFAULT_TOLERANCE_MM = 10.0


class MetricError(ValueError):
    pass


def _masks(a, b) -> tuple[np.ndarray, np.ndarray, tuple[float, float, float]]:
    if isinstance(a, VoxelGrid) and isinstance(b, VoxelGrid):
        check_compatible(a, b)
        return a.mask, b.mask, a.spacing
    a, b = np.asarray(a, dtype=bool), np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b, (1.0, 1.0, 1.0)


def dsc(a, b) -> float:
    """Dice similarity coefficient 2|A & B| / (|A| + |B|)."""
    a, b, _ = _masks(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        raise MetricError("Dice is undefined for two empty masks")
    return 2.0 * int(np.count_nonzero(a & b)) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    inner = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(3, 1), border_value=0)
    return mask & ~inner


def surface_points(mask: np.ndarray) -> np.ndarray:
    return np.argwhere(boundary(mask))


def point_distances(p: np.ndarray, q: np.ndarray, spacing) -> np.ndarray:
    """Euclidean mm distance between index triples, row by row."""
    return np.sqrt(np.sum(((p - q) * np.asarray(spacing)) ** 2, axis=-1))


def nearest_distances(src: np.ndarray, dst: np.ndarray, spacing) -> np.ndarray:
    """Distance from every ``src`` voxel to its nearest ``dst`` voxel.

    The k-d tree only proposes candidates; the reported value is recomputed
    with :func:`point_distances` so it matches an exhaustive search exactly.
    """
    sp = np.asarray(spacing, dtype=np.float64)
    tree = cKDTree(dst * sp)
    approx, _ = tree.query(src * sp)
    out = np.empty(len(src))
    for i, (p, r) in enumerate(zip(src, approx)):
        cand = tree.query_ball_point(p * sp, r * (1 + 1e-9) + 1e-12)
        out[i] = point_distances(p[None, :], dst[cand], sp).min()
    return out


def directed_surface_distances(a, b, spacing=None) -> tuple[np.ndarray, np.ndarray]:
    a, b, sp = _masks(a, b)
    sp = sp if spacing is None else tuple(spacing)
    pa, pb = surface_points(a), surface_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise MetricError("surface distance needs two non-empty masks")
    return nearest_distances(pa, pb, sp), nearest_distances(pb, pa, sp)


def boundary_dsc(a, b, tolerance_mm: float = DEFAULT_TOLERANCE_MM, spacing=None) -> float:
    """Fraction of both boundaries lying within ``tolerance_mm`` of the other."""
    am, bm, sp = _masks(a, b)
    sp = sp if spacing is None else tuple(spacing)
    pa, pb = surface_points(am), surface_points(bm)
    if len(pa) == 0 and len(pb) == 0:
        raise MetricError("both boundaries are empty")
    if len(pa) == 0 or len(pb) == 0:
        return 0.0
    da = nearest_distances(pa, pb, sp)
    db = nearest_distances(pb, pa, sp)
    matched = int(np.count_nonzero(da <= tolerance_mm)) + int(np.count_nonzero(db <= tolerance_mm))
    return matched / (len(pa) + len(pb))


def hd95(a, b, spacing=None) -> float:
    """95th percentile of the pooled boundary-to-boundary nearest distances."""
    da, db = directed_surface_distances(a, b, spacing)
    return float(np.percentile(np.concatenate([da, db]), 95))


@dataclass
class MetricReport:
    dsc: float
    bdsc: float
    hd95: float
    tolerance_mm: float
    spacing_mm: tuple[float, float, float]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spacing_mm"] = list(self.spacing_mm)
        return d


def evaluate(pred: VoxelGrid, gt: VoxelGrid, tolerance_mm: float = DEFAULT_TOLERANCE_MM) -> MetricReport:
    check_compatible(pred, gt)
    return MetricReport(
        dsc=dsc(pred, gt),
        bdsc=boundary_dsc(pred, gt, tolerance_mm),
        hd95=hd95(pred, gt),
        tolerance_mm=float(tolerance_mm),
        spacing_mm=pred.spacing,
    )
