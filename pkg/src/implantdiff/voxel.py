"""Dense voxel grids, on-disk volume format and binary morphology.

A volume on disk is a pair of files sharing a stem: ``<stem>.json`` holds
``{"dims", "spacing_mm", "dtype"}`` and ``<stem>.raw`` the little-endian
payload with x varying fastest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy import ndimage

PathLike = Union[str, Path]

BINARY = "binary"
REAL = "real"

_DTYPES = {BINARY: "uint8", REAL: "float32"}
_NUMPY = {"uint8": np.dtype("<u1"), "float32": np.dtype("<f4")}


class VolumeError(ValueError):
    """Raised for malformed volumes or incompatible grid operands."""


@dataclass(eq=False)
class VoxelGrid:
    """Scalar field on a regular grid, indexed ``values[x, y, z]``."""

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: str = BINARY

    def __post_init__(self) -> None:
        if self.kind not in _DTYPES:
            raise VolumeError(f"unknown grid kind {self.kind!r}")
        values = np.asarray(self.values)
        if values.ndim != 3 or min(values.shape) < 1:
            raise VolumeError(f"expected a non-empty 3D array, got shape {values.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(s > 0 and np.isfinite(s) for s in spacing):
            raise VolumeError(f"spacing must be 3 positive reals, got {self.spacing}")
        if self.kind == BINARY:
            if values.dtype == bool:
                values = values.astype(np.uint8)
            elif not np.isin(values, (0, 1)).all():
                raise VolumeError("binary grid contains values outside {0, 1}")
            values = values.astype(np.uint8, copy=False)
        else:
            values = values.astype(np.float32, copy=False)
        self.values = values
        self.spacing = spacing

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.values.shape)

    @property
    def mask(self) -> np.ndarray:
        return self.values.astype(bool)

    def like(self, values: np.ndarray, kind: str | None = None) -> "VoxelGrid":
        """New grid with the same spacing."""
        return VoxelGrid(values, self.spacing, kind or self.kind)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.spacing == other.spacing
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )


def zeros_like(grid: VoxelGrid) -> VoxelGrid:
    return grid.like(np.zeros(grid.dims, dtype=np.uint8), BINARY)


def _paths(path: PathLike) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".raw")


def save_volume(grid: VoxelGrid, path: PathLike) -> Path:
    """Write ``grid`` as a header/payload pair and return the header path."""
    # re-run validation: values may have been mutated in place since construction
    grid = VoxelGrid(grid.values, grid.spacing, grid.kind)
    header_path, payload_path = _paths(path)
    dtype = _DTYPES[grid.kind]
    header = {
        "dims": list(grid.dims),
        "spacing_mm": list(grid.spacing),
        "dtype": dtype,
        "kind": grid.kind,
    }
    payload = np.ascontiguousarray(grid.values.astype(_NUMPY[dtype]).ravel(order="F"))
    try:
        payload_path.write_bytes(payload.tobytes())
        header_path.write_text(json.dumps(header, indent=2) + "\n")
    except OSError as exc:
        raise VolumeError(f"cannot write volume to {header_path}: {exc}") from exc
    return header_path


def load_volume(path: PathLike) -> VoxelGrid:
    header_path, payload_path = _paths(path)
    if not header_path.exists():
        raise FileNotFoundError(f"volume header not found: {header_path}")
    if not payload_path.exists():
        raise FileNotFoundError(f"volume payload not found: {payload_path}")
    header = json.loads(header_path.read_text())
    try:
        dims = tuple(int(d) for d in header["dims"])
        spacing = tuple(float(s) for s in header["spacing_mm"])
        dtype = header["dtype"]
    except (KeyError, TypeError) as exc:
        raise VolumeError(f"malformed header {header_path}: {exc}") from exc
    if dtype not in _NUMPY:
        raise VolumeError(f"unsupported dtype {dtype!r}")
    kind = header.get("kind", BINARY if dtype == "uint8" else REAL)
    expected = int(np.prod(dims)) * _NUMPY[dtype].itemsize
    raw = payload_path.read_bytes()
    if len(raw) != expected:
        raise VolumeError(
            f"payload size mismatch: header implies {expected} bytes, found {len(raw)}"
        )
    values = np.frombuffer(raw, dtype=_NUMPY[dtype]).reshape(dims, order="F")
    return VoxelGrid(values.copy(), spacing, kind)


def check_compatible(a: VoxelGrid, b: VoxelGrid) -> None:
    if a.dims != b.dims:
        raise VolumeError(f"shape mismatch: {a.dims} vs {b.dims}")
    if not np.allclose(a.spacing, b.spacing, rtol=0, atol=1e-9):
        raise VolumeError(f"spacing mismatch: {a.spacing} vs {b.spacing}")


def _require_binary(grid: VoxelGrid) -> None:
    if grid.kind != BINARY:
        raise VolumeError("operation requires a binary grid")


def boolean_subtract(a: VoxelGrid, b: VoxelGrid) -> VoxelGrid:
    """Voxels set in ``a`` and clear in ``b``."""
    _require_binary(a)
    _require_binary(b)
    check_compatible(a, b)
    return a.like((a.values & (1 - b.values)).astype(np.uint8))


def median_filter3(grid: VoxelGrid) -> VoxelGrid:
    """Majority vote over each 3x3x3 neighbourhood, zero outside the volume."""
    _require_binary(grid)
    counts = ndimage.convolve(
        grid.values.astype(np.int16), np.ones((3, 3, 3), dtype=np.int16), mode="constant", cval=0
    )
    return grid.like((counts >= 14).astype(np.uint8))


def ball_structure(radius: int) -> np.ndarray:
    """6-connected discrete ball, i.e. the L1 ball of the given radius."""
    if radius < 1:
        raise ValueError("radius must be a positive integer")
    r = np.arange(-radius, radius + 1)
    x, y, z = np.meshgrid(r, r, r, indexing="ij")
    return (np.abs(x) + np.abs(y) + np.abs(z)) <= radius


def binary_erosion(grid: VoxelGrid, radius: int = 1) -> VoxelGrid:
    _require_binary(grid)
    out = ndimage.binary_erosion(grid.mask, structure=ball_structure(radius), border_value=0)
    return grid.like(out.astype(np.uint8))


def binary_dilation(grid: VoxelGrid, radius: int = 1) -> VoxelGrid:
    _require_binary(grid)
    out = ndimage.binary_dilation(grid.mask, structure=ball_structure(radius), border_value=0)
    return grid.like(out.astype(np.uint8))


def binary_opening(grid: VoxelGrid, radius_voxels: int = 1) -> VoxelGrid:
    """Erosion followed by dilation with an L1 ball; background outside the volume."""
    return binary_dilation(binary_erosion(grid, radius_voxels), radius_voxels)
