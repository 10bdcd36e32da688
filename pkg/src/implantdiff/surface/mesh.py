"""Isosurface extraction from binary voxel grids."""

from __future__ import annotations

import numpy as np
from skimage import measure

from ..voxel import VoxelGrid
from .cloud import TriMesh


class NoSurfaceError(ValueError):
    pass


def marching_cubes(grid: VoxelGrid, iso: float = 0.5) -> TriMesh:
    """Triangulate the ``iso`` level set of ``grid``; vertices in mm.

    The grid is padded by one background voxel on every side so surfaces that
    touch the volume border are still closed.
    """
    values = np.asarray(grid.values, dtype=np.float64)
    if values.max() <= iso:
        raise NoSurfaceError("grid is empty: no surface")
    if values.min() > iso:
        raise NoSurfaceError("grid is full: no surface")
    padded = np.pad(values, 1, mode="constant", constant_values=0.0)
    verts, faces, _, _ = measure.marching_cubes(padded, level=iso, method="lorensen")
    verts = (verts - 1.0) * np.asarray(grid.spacing)
    # lorensen emits shared vertices; drop any unreferenced ones
    used, inverse = np.unique(faces.ravel(), return_inverse=True)
    # reverse the winding so face normals point out of the foreground
    return TriMesh(verts[used], inverse.reshape(-1, 3)[:, ::-1])
