"""Isotropic mapping between millimetre coordinates and the [-3, 3] cube."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cloud import PointCloud

HALF_RANGE = 3.0


@dataclass(frozen=True)
class NormalizationTransform:
    """``y = scale * (x - offset)``; ``offset`` is the bounding-box centre in mm."""

    scale: float
    offset: tuple[float, float, float]

    def __post_init__(self) -> None:
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def forward(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(points, dtype=np.float64) - np.asarray(self.offset))

    def inverse(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + np.asarray(self.offset)

    def to_dict(self) -> dict:
        return {"scale": self.scale, "offset": list(self.offset)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationTransform":
        return cls(float(d["scale"]), tuple(float(v) for v in d["offset"]))


def fit_normalization(cloud: PointCloud | np.ndarray) -> NormalizationTransform:
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if len(points) == 0:
        raise ValueError("cannot normalize an empty cloud")
    lo, hi = points.min(axis=0), points.max(axis=0)
    extent = float((hi - lo).max())
    if not extent > 0:
        raise ValueError("cloud has zero extent")
    return NormalizationTransform(2.0 * HALF_RANGE / extent, tuple(float(c) for c in (lo + hi) / 2))


def apply_normalization(
    cloud: PointCloud, transform: NormalizationTransform, inverse: bool = False
) -> PointCloud:
    """Map every point; normals are direction-only and pass through unchanged."""
    fn = transform.inverse if inverse else transform.forward
    return replace(cloud, points=fn(cloud.points))
