"""End-to-end stages: volumes to point clouds, completion, and back to voxels."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import dpsr
from .diffusion import DiffusionSchedule, complete
from .denoiser.network import DenoiserConfig, Params, PointDenoiser
from .implant import EnsembleStats, ensemble_stats, generate_implant
from .rng import member_seed
from .surface import (
    NormalizationTransform,
    PointCloud,
    apply_normalization,
    estimate_normals,
    fit_normalization,
    marching_cubes,
    poisson_disk_sample,
)
from .voxel import VoxelGrid

TOY_N = 512
TOY_M = 64
# ball radii for the toy budget: the 0.1 / 0.2 used with ~30k points, widened
# roughly by the drop in point density (about 7x fewer points per unit length)
TOY_RADII = (0.75, 2.0)
NORMAL_K = 8
FREE_NORMAL_K = 12

log = logging.getLogger(__name__)


@dataclass
class TrainingPair:
    free: np.ndarray  # (M, 3) normalized
    condition: np.ndarray  # (N, 3) normalized
    transform: NormalizationTransform


def surface_points(grid: VoxelGrid, count: int, seed: int) -> np.ndarray:
    """Blue-noise sample of the grid's iso-surface, in mm."""
    return poisson_disk_sample(marching_cubes(grid), count, seed).points


def condition_cloud(s_d: VoxelGrid, n: int, seed: int) -> tuple[np.ndarray, NormalizationTransform]:
    """Normalized condition points and the transform fitted to them."""
    pts = surface_points(s_d, n, seed)
    tf = fit_normalization(pts)
    return tf.forward(pts), tf


def training_pair(s_d: VoxelGrid, implant: VoxelGrid, n: int, m: int, seed: int) -> TrainingPair:
    """Condition points from the defective surface, free points from the implant.

    Both share the normalization fitted to the condition points, the only
    transform available at inference time.
    """
    cond, tf = condition_cloud(s_d, n, seed)
    free = tf.forward(surface_points(implant, m, seed + 1))
    return TrainingPair(free, cond, tf)


def stack_pairs(pairs: Sequence[TrainingPair]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([p.free for p in pairs]), np.stack([p.condition for p in pairs])


def orient_blocks(cloud: PointCloud, k: int = NORMAL_K, free_k: int = FREE_NORMAL_K) -> PointCloud:
    """Estimate normals separately on the condition and free blocks.

    Each block is a closed surface of its own (defective structure, implant);
    orienting their union at once lets the coincident rim faces flip whole
    sheets. The free block is a sparse thin patch, so its normals are flipped
    point by point away from its centroid rather than along a spanning tree.
    """
    blocks = []
    for pts, kk, orient in ((cloud.condition, k, "mst"), (cloud.free, free_k, "centroid")):
        if len(pts) == 0:
            continue
        blocks.append(estimate_normals(PointCloud(pts), min(kk, len(pts)), orient).normals)
    return cloud.with_normals(np.vstack(blocks))


def voxelize_cloud(
    cloud_mm: PointCloud,
    like: VoxelGrid,
    grid: int | None = None,
    sigma: float = dpsr.DEFAULT_SIGMA,
    k: int = NORMAL_K,
) -> VoxelGrid:
    """Binary volume aligned with ``like`` from an (unoriented) cloud in mm."""
    oriented = orient_blocks(cloud_mm, k)
    spacing = np.asarray(like.spacing)
    dims = np.asarray(like.dims)
    res = dims if grid is None else np.full(3, int(grid))
    factor = res / dims
    pts = oriented.points / spacing * factor
    # generated points may stray outside the volume; keep them off the periodic seam
    inside = np.clip(pts, 0.0, res - 1.0)
    clipped = int(np.count_nonzero(np.any(inside != pts, axis=1)))
    if clipped:
        log.info("clipped %d points to the volume", clipped)
    gcloud = PointCloud(inside, oriented.split, oriented.normals)
    chi = dpsr.reconstruct(gcloud, tuple(int(r) for r in res), sigma)
    if np.array_equal(res, dims):
        values = chi.values
    else:
        idx = np.stack(np.meshgrid(*[np.arange(d) for d in dims], indexing="ij"), axis=-1).reshape(-1, 3)
        values = dpsr.sample_trilinear(chi.values, idx * factor).reshape(tuple(dims))
    return dpsr.voxelize(dpsr.IndicatorGrid(values), like.spacing)


@dataclass
class Completion:
    cloud: PointCloud  # mm, condition block first
    complete: VoxelGrid
    implant: VoxelGrid


def complete_volume(
    s_d: VoxelGrid,
    params: Params,
    cfg: DenoiserConfig,
    sched: DiffusionSchedule,
    n: int = TOY_N,
    m: int = TOY_M,
    ensemble: int = 1,
    seed: int = 0,
    grid: int | None = None,
    sigma: float = dpsr.DEFAULT_SIGMA,
) -> tuple[list[Completion], EnsembleStats]:
    """Run the full defect-to-implant chain for ``ensemble`` independent draws."""
    cond, tf = condition_cloud(s_d, n, seed)
    denoiser = PointDenoiser(params, cfg)
    members = []
    for i in range(ensemble):
        cloud = complete(cond, m, denoiser, sched, member_seed(seed, i))
        cloud_mm = apply_normalization(cloud, tf, inverse=True)
        s_c = voxelize_cloud(cloud_mm, s_d, grid, sigma)
        members.append(Completion(cloud_mm, s_c, generate_implant(s_c, s_d)))
    return members, ensemble_stats([c.implant for c in members])
