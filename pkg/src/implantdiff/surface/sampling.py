"""Blue-noise sampling of triangle meshes by weighted sample elimination."""

from __future__ import annotations

import heapq

import numpy as np
from scipy.spatial import cKDTree

from ..rng import make_rng
from .cloud import PointCloud, TriMesh

OVERSAMPLING = 4
ALPHA = 8


def uniform_surface_sample(mesh: TriMesh, count: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted i.i.d. points on the mesh surface."""
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    tri = rng.choice(len(areas), size=count, p=areas / total)
    u = rng.random(count)
    v = rng.random(count)
    su = np.sqrt(u)
    b0, b1, b2 = 1.0 - su, su * (1.0 - v), su * v
    a, b, c = (mesh.vertices[mesh.triangles[tri, i]] for i in range(3))
    return b0[:, None] * a + b1[:, None] * b + b2[:, None] * c


def max_poisson_radius(area: float, count: int) -> float:
    """Radius of the densest hexagonal packing of ``count`` disks on ``area``."""
    return float(np.sqrt(area / (2.0 * np.sqrt(3.0) * count)))


def eliminate(candidates: np.ndarray, count: int, r_max: float) -> np.ndarray:
    """Indices of ``count`` candidates kept after greedy weighted elimination.

    Each candidate carries weight sum_j (1 - d_ij / (2 r_max))^8 over its
    neighbours closer than 2 r_max; the heaviest candidate is removed and its
    neighbours' weights are reduced until ``count`` remain.
    """
    n = len(candidates)
    if count >= n:
        return np.arange(n)
    tree = cKDTree(candidates)
    pairs = tree.sparse_distance_matrix(tree, 2.0 * r_max, output_type="coo_matrix")
    mask = pairs.row != pairs.col
    rows, cols = pairs.row[mask], pairs.col[mask]
    w = (1.0 - pairs.data[mask] / (2.0 * r_max)) ** ALPHA
    order = np.argsort(rows, kind="stable")
    rows, cols, w = rows[order], cols[order], w[order]
    starts = np.searchsorted(rows, np.arange(n + 1))

    weight = np.zeros(n)
    np.add.at(weight, rows, w)
    heap = [(-weight[i], i) for i in range(n)]
    heapq.heapify(heap)
    alive = np.ones(n, dtype=bool)
    remaining = n
    while remaining > count:
        neg_w, i = heapq.heappop(heap)
        if not alive[i] or -neg_w != weight[i]:
            continue
        alive[i] = False
        remaining -= 1
        for k in range(starts[i], starts[i + 1]):
            j = cols[k]
            if alive[j]:
                weight[j] -= w[k]
                heapq.heappush(heap, (-weight[j], j))
    return np.flatnonzero(alive)


def poisson_disk_sample(mesh: TriMesh, count: int, rng_seed: int) -> PointCloud:
    """Exactly ``count`` blue-noise points on ``mesh``."""
    if count < 1:
        raise ValueError("count must be positive")
    area = mesh.area
    if not area > 0:
        raise ValueError("mesh has zero surface area")
    rng = make_rng(rng_seed)
    candidates = uniform_surface_sample(mesh, OVERSAMPLING * count, rng)
    keep = eliminate(candidates, count, max_poisson_radius(area, count))
    return PointCloud(candidates[keep])
