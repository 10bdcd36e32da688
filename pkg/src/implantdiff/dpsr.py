"""Spectral Poisson voxelization of oriented point clouds.

Coordinates handed to this module are in grid units: cell ``(i, j, k)`` is
centred on the integer point ``(i, j, k)`` and the domain ``[0, n)`` is
periodic along every axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .surface.cloud import PointCloud
from .voxel import BINARY, REAL, VolumeError, VoxelGrid

DEFAULT_SIGMA = 1.0
DOMAIN_TOL = 1e-6


@dataclass
class VectorField:
    values: np.ndarray  # (3, nx, ny, nz)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.values.shape[1:])


@dataclass
class IndicatorGrid:
    values: np.ndarray  # (nx, ny, nz) float64

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.values.shape)

    def to_voxel_grid(self, spacing=(1.0, 1.0, 1.0)) -> VoxelGrid:
        return VoxelGrid(self.values, spacing, REAL)

    @classmethod
    def from_voxel_grid(cls, grid: VoxelGrid) -> "IndicatorGrid":
        return cls(np.asarray(grid.values, dtype=np.float64))


def _wrap(points: np.ndarray, dims) -> np.ndarray:
    u = np.asarray(points, dtype=np.float64)
    d = np.asarray(dims, dtype=np.float64)
    if np.any(u < -DOMAIN_TOL) or np.any(u > d + DOMAIN_TOL):
        raise ValueError("point outside the grid domain")
    return np.mod(np.clip(u, 0.0, None), d)


def _corners(u: np.ndarray, dims):
    """Yield (flat-index tuple, weight) for the 8 trilinear corners of each point."""
    base = np.floor(u).astype(np.int64)
    frac = u - base
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                off = np.array([dx, dy, dz])
                idx = (base + off) % np.asarray(dims)
                w = np.prod(np.where(off == 1, frac, 1.0 - frac), axis=1)
                yield (idx[:, 0], idx[:, 1], idx[:, 2]), w


def rasterize_oriented_points(cloud: PointCloud, dims) -> VectorField:
    """Splat each normal onto its 8 surrounding cells with trilinear weights."""
    if cloud.normals is None:
        raise ValueError("rasterization requires normals")
    dims = tuple(int(d) for d in dims)
    u = _wrap(cloud.points, dims)
    field = np.zeros((3,) + dims)
    for idx, w in _corners(u, dims):
        for c in range(3):
            np.add.at(field[c], idx, w * cloud.normals[:, c])
    return VectorField(field)


def sample_trilinear(grid: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Periodic trilinear interpolation of ``grid`` at grid-unit ``points``."""
    u = _wrap(points, grid.shape)
    out = np.zeros(len(u))
    for idx, w in _corners(u, grid.shape):
        out += w * grid[idx]
    return out


def wavenumbers(dims) -> list[np.ndarray]:
    return [2.0 * np.pi * np.fft.fftfreq(n) for n in dims]


def spectral_kernel(dims, sigma: float):
    """Per-axis ``i k`` factors and the combined ``G(k) / (-|k|^2)`` multiplier."""
    kx, ky, kz = np.meshgrid(*wavenumbers(dims), indexing="ij")
    k2 = kx**2 + ky**2 + kz**2
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.exp(-0.5 * sigma**2 * k2) / -k2
    scale[0, 0, 0] = 0.0
    return (1j * kx, 1j * ky, 1j * kz), scale


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def spectral_poisson_solve(
    v: VectorField, sigma: float = DEFAULT_SIGMA, points: np.ndarray | None = None
) -> IndicatorGrid:
    """Solve lap(chi) = div(v) on the periodic grid.

    When ``points`` are given, chi is shifted so its mean over those locations
    is zero, placing the surface at the zero level.
    """
    if not all(_is_pow2(n) for n in v.dims):
        raise ValueError(f"grid dims must be powers of two, got {v.dims}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    grads, scale = spectral_kernel(v.dims, sigma)
    div_hat = sum(g * np.fft.fftn(v.values[c]) for c, g in enumerate(grads))
    chi = np.fft.ifftn(div_hat * scale).real
    if points is not None and len(points):
        chi = chi - sample_trilinear(chi, points).mean()
    return IndicatorGrid(chi)


def voxelize(chi: IndicatorGrid, spacing=(1.0, 1.0, 1.0)) -> VoxelGrid:
    """Inside wherever the indicator is non-positive."""
    return VoxelGrid((chi.values <= 0).astype(np.uint8), spacing, BINARY)


def gt_indicator(s_c: VoxelGrid) -> IndicatorGrid:
    if s_c.kind != BINARY:
        raise VolumeError("ground-truth indicator needs a binary grid")
    return IndicatorGrid(np.where(s_c.values == 1, -0.5, 0.5))


def indicator_loss(chi_hat: IndicatorGrid, chi: IndicatorGrid) -> float:
    if chi_hat.dims != chi.dims:
        raise VolumeError(f"shape mismatch: {chi_hat.dims} vs {chi.dims}")
    return float(np.mean((chi_hat.values - chi.values) ** 2))


def reconstruct(cloud: PointCloud, dims, sigma: float = DEFAULT_SIGMA) -> IndicatorGrid:
    """Rasterize, solve and zero-level calibrate in one call."""
    v = rasterize_oriented_points(cloud, dims)
    return spectral_poisson_solve(v, sigma, cloud.points)
