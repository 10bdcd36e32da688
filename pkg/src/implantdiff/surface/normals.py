"""Oriented normal estimation for unoriented point clouds."""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, minimum_spanning_tree
from scipy.spatial import cKDTree

from .cloud import PointCloud


def knn(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Distances and indices of the k nearest points, the point itself included."""
    dist, idx = cKDTree(points).query(points, k=k)
    return dist.reshape(len(points), k), idx.reshape(len(points), k)


def pca_normals(points: np.ndarray, idx: np.ndarray) -> np.ndarray:
    nbrs = points[idx]
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    n = vecs[:, :, 0]
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def orient_along_mst(points: np.ndarray, normals: np.ndarray, dist, idx) -> np.ndarray:
    """Propagate a consistent sign along the Euclidean MST of the k-NN graph.

    Each connected component is then flipped so most of its normals point away
    from the cloud centroid.
    """
    n = len(points)
    rows = np.repeat(np.arange(n), idx.shape[1])
    cols = idx.ravel()
    # zero-length edges would vanish from the sparse graph
    w = np.maximum(dist.ravel(), 1e-12)
    keep = rows != cols
    graph = coo_matrix((w[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    graph = graph.maximum(graph.T)
    tree = minimum_spanning_tree(graph)
    tree = tree + tree.T
    normals = normals.copy()
    n_comp, labels = connected_components(tree, directed=False)
    centroid = points.mean(axis=0)
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        order, pred = breadth_first_order(tree, members[0], directed=False)
        for node in order[1:]:
            if normals[node] @ normals[pred[node]] < 0:
                normals[node] = -normals[node]
        outward = np.einsum("ij,ij->i", normals[members], points[members] - centroid)
        if np.count_nonzero(outward > 0) < np.count_nonzero(outward < 0):
            normals[members] = -normals[members]
    return normals


ORIENTATIONS = ("mst", "centroid")


def orient_from_centroid(points: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """Flip every normal to point away from the centroid (ties keep their sign)."""
    side = np.einsum("ij,ij->i", normals, points - points.mean(axis=0))
    return np.where(side[:, None] < 0, -normals, normals)


def estimate_normals(cloud: PointCloud, k: int = 8, orient: str = "mst") -> PointCloud:
    """Unit normals from local PCA, consistently oriented and pointing outward.

    ``orient="mst"`` propagates signs along the spanning tree. ``"centroid"``
    flips each normal on its own to point away from the cloud centroid, which
    suits small slab-like patches where the tree hops between the two sheets.
    """
    if orient not in ORIENTATIONS:
        raise ValueError(f"orient must be one of {ORIENTATIONS}, got {orient!r}")
    if k < 3:
        raise ValueError("k must be at least 3")
    if len(cloud) < k:
        raise ValueError(f"need at least k={k} points, got {len(cloud)}")
    dist, idx = knn(cloud.points, k)
    normals = pca_normals(cloud.points, idx)
    if orient == "mst":
        normals = orient_along_mst(cloud.points, normals, dist, idx)
    else:
        normals = orient_from_centroid(cloud.points, normals)
    return cloud.with_normals(normals)
