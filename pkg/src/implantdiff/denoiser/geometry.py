"""Centre selection, neighbourhood grouping and interpolation for point sets.

Functions accept a single cloud ``(n, 3)`` or a batch ``(B, n, 3)``.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse


def _batched(points: np.ndarray) -> tuple[np.ndarray, bool]:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 2:
        return points[None], True
    return points, False


def farthest_point_sampling(points: np.ndarray, k: int, start_index=0) -> np.ndarray:
    """Greedy max-min selection of ``k`` indices starting at ``start_index``.

    Ties go to the lowest index.
    """
    pts, single = _batched(points)
    b, n, _ = pts.shape
    if k > n:
        raise ValueError(f"cannot select {k} centres from {n} points")
    start = np.broadcast_to(np.asarray(start_index, dtype=np.int64), (b,))
    rows = np.arange(b)
    chosen = np.empty((b, k), dtype=np.int64)
    dist = np.full((b, n), np.inf)
    current = start.copy()
    for i in range(k):
        chosen[:, i] = current
        d = _sq_norm(pts - pts[rows, current][:, None, :])
        np.minimum(dist, d, out=dist)
        current = np.argmax(dist, axis=1)
    return chosen[0] if single else chosen


def farthest_from_centroid(points: np.ndarray) -> np.ndarray:
    """Order-independent FPS seed: the point farthest from the centroid."""
    pts, single = _batched(points)
    d = np.sum((pts - pts.mean(axis=1, keepdims=True)) ** 2, axis=-1)
    idx = np.argmax(d, axis=1)
    return idx[0] if single else idx


def _sq_norm(d: np.ndarray) -> np.ndarray:
    # same additions as np.sum over the 3-axis, without the slow short reduce
    return d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]


def pairwise_sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return _sq_norm(a[..., :, None, :] - b[..., None, :, :])


def smallest(key: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest keys along the last axis, ascending, ties to the lower index."""
    n = key.shape[-1]
    if k >= n:
        return np.argsort(key, axis=-1, kind="stable")
    part = np.argpartition(key, k - 1, axis=-1)[..., :k]
    vals = np.take_along_axis(key, part, axis=-1)
    order = np.lexsort((part, vals), axis=-1)
    out = np.take_along_axis(part, order, axis=-1)
    # a tie at the cut may have kept a higher index than a stable sort would
    kth = np.take_along_axis(vals, order[..., -1:], axis=-1)
    tied = np.count_nonzero(key <= kth, axis=-1) > k
    if np.any(tied):
        out[tied] = np.argsort(key[tied], axis=-1, kind="stable")[..., :k]
    return out


def ball_query(
    centers: np.ndarray,
    points: np.ndarray,
    radius: float,
    max_neighbors: int,
    order: str = "scan",
) -> np.ndarray:
    """Up to ``max_neighbors`` indices of points within ``radius`` of each centre.

    ``order="scan"`` keeps the lowest indices inside the ball; ``"distance"``
    keeps the nearest ones, which makes the result independent of point order.
    Short lists are padded with their first entry and an empty ball falls
    back to the nearest point.
    """
    if radius <= 0 or max_neighbors < 1:
        raise ValueError("radius and max_neighbors must be positive")
    c, single = _batched(centers)
    p, _ = _batched(points)
    d2 = pairwise_sq_dist(c, p)
    inside = d2 <= radius * radius
    n = p.shape[1]
    if order == "scan":
        key = np.where(inside, np.arange(n), n + np.arange(n))
    elif order == "distance":
        # outside points rank after every inside one and are replaced below
        key = d2
    else:
        raise ValueError(f"unknown order {order!r}")
    k = min(max_neighbors, n)
    idx = smallest(key, k)
    valid = np.take_along_axis(inside, idx, axis=-1)
    nearest = np.argmin(d2, axis=-1)
    first = np.where(valid[..., 0], idx[..., 0], nearest)
    idx = np.where(valid, idx, first[..., None])
    if k < max_neighbors:
        pad = np.repeat(first[..., None], max_neighbors - k, axis=-1)
        idx = np.concatenate([idx, pad], axis=-1)
    return idx[0] if single else idx


def three_nn_weights(targets: np.ndarray, sources: np.ndarray, k: int = 3, power: float = 2.0):
    """Indices of the ``k`` nearest sources per target and normalized 1/d^power weights."""
    t, single = _batched(targets)
    s, _ = _batched(sources)
    k = min(k, s.shape[1])
    d2 = pairwise_sq_dist(t, s)
    idx = smallest(d2, k)
    dk = np.take_along_axis(d2, idx, axis=-1)
    w = 1.0 / (dk ** (power / 2.0) + 1e-8)
    w = w / w.sum(axis=-1, keepdims=True)
    if single:
        return idx[0], w[0]
    return idx, w


def gather(features: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """``features[b, idx[b, ...]]`` for every batch row."""
    b = features.shape[0]
    rows = np.arange(b).reshape((b,) + (1,) * (idx.ndim - 1))
    return features[rows, idx]


def scatter_add(grad: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    """Adjoint of :func:`gather`: accumulate ``grad`` back onto ``n`` rows per batch."""
    b = grad.shape[0]
    c = grad.shape[-1]
    flat = (idx + (np.arange(b) * n).reshape((b,) + (1,) * (idx.ndim - 1))).ravel()
    m = sparse.csr_matrix((np.ones(len(flat), grad.dtype), (flat, np.arange(len(flat)))), shape=(b * n, len(flat)))
    return (m @ grad.reshape(-1, c)).reshape(b, n, c)
