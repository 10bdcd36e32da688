"""Synthetic defective shells used as a desk-scale training and test corpus.

A phantom is a digitized ellipsoidal shell. Its defect is the part of the
shell inside a cone around ``defect_direction`` with half-angle
``defect_angle_deg``, i.e. a spherical-cap cut through the wall.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from .rng import make_rng
from .voxel import VoxelGrid, boolean_subtract

MARGIN = 2


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 64, 64)
    radii: tuple[float, float, float] = (17.0, 20.0, 17.0)
    thickness: float = 6.0
    defect_direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    defect_angle_deg: float = 40.0
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    center: Optional[tuple[float, float, float]] = None
    seed: int = 0

    @property
    def centre(self) -> np.ndarray:
        if self.center is not None:
            return np.asarray(self.center, dtype=np.float64)
        return (np.asarray(self.dims, dtype=np.float64) - 1.0) / 2.0

    def validate(self) -> None:
        dims = np.asarray(self.dims)
        radii = np.asarray(self.radii, dtype=np.float64)
        if np.any(radii <= self.thickness) or self.thickness <= 0:
            raise ValueError("thickness must be positive and smaller than every radius")
        lo, hi = self.centre - radii, self.centre + radii
        if np.any(lo < MARGIN) or np.any(hi > dims - 1 - MARGIN):
            raise ValueError("shell does not fit inside the volume with the required margin")
        if not 0.0 < self.defect_angle_deg < 180.0:
            raise ValueError("defect angle must lie strictly between 0 and 180 degrees")
        if not np.linalg.norm(self.defect_direction) > 0:
            raise ValueError("defect direction must be non-zero")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


@dataclass
class Phantom:
    spec: PhantomSpec
    complete: VoxelGrid
    defective: VoxelGrid
    implant: VoxelGrid


def shell_and_cap(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Boolean shell mask and defect-cone mask over the whole volume."""
    axes = [np.arange(n, dtype=np.float64) - c for n, c in zip(spec.dims, spec.centre)]
    q = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    outer = np.asarray(spec.radii, dtype=np.float64)
    inner = outer - spec.thickness
    shell = (np.sum((q / outer) ** 2, axis=-1) <= 1.0) & ~(np.sum((q / inner) ** 2, axis=-1) <= 1.0)
    d = np.asarray(spec.defect_direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    cos_t = np.cos(np.deg2rad(spec.defect_angle_deg))
    cap = q @ d >= np.linalg.norm(q, axis=-1) * cos_t
    return shell, cap


def make_phantom(spec: PhantomSpec) -> Phantom:
    spec.validate()
    shell, cap = shell_and_cap(spec)
    defect = shell & cap
    if not defect.any():
        raise ValueError("defect is empty")
    if defect.sum() == shell.sum():
        raise ValueError("defect covers the entire shell")
    complete = VoxelGrid(shell.astype(np.uint8), spec.spacing)
    defective = VoxelGrid((shell & ~cap).astype(np.uint8), spec.spacing)
    return Phantom(spec, complete, defective, boolean_subtract(complete, defective))


def random_direction(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def make_dataset(
    n: int,
    base_spec: PhantomSpec = PhantomSpec(),
    seed: int = 0,
    angle_range: tuple[float, float] = (30.0, 45.0),
    radius_jitter: float = 1.5,
) -> tuple[list[Phantom], dict]:
    """``n`` phantoms with random defect direction, defect size and radii jitter."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = make_rng(seed)
    phantoms = []
    for i in range(n):
        radii = np.asarray(base_spec.radii) + rng.uniform(-radius_jitter, radius_jitter, size=3)
        spec = replace(
            base_spec,
            radii=tuple(float(r) for r in radii),
            defect_direction=tuple(float(v) for v in random_direction(rng)),
            defect_angle_deg=float(rng.uniform(*angle_range)),
            seed=int(seed) * 100003 + i,
        )
        phantoms.append(make_phantom(spec))
    manifest = {
        "n": n,
        "seed": int(seed),
        "angle_range": list(angle_range),
        "radius_jitter": radius_jitter,
        "base_spec": base_spec.to_dict(),
        "specs": [p.spec.to_dict() for p in phantoms],
    }
    return phantoms, manifest
