"""Triangle meshes, point clouds and their ASCII PLY encoding."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3) mm
    triangles: np.ndarray  # (F, 3) int

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles):
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise ValueError("triangle index out of range")
            t = self.triangles
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise ValueError("degenerate triangle with repeated vertex index")

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @property
    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def signed_volume(self) -> float:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def edge_face_counts(self) -> dict[tuple[int, int], int]:
        """Number of triangles incident to each undirected edge."""
        t = self.triangles
        edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        edges.sort(axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        return {(int(a), int(b)): int(c) for (a, b), c in zip(uniq, counts)}

    def is_watertight(self) -> bool:
        counts = self.edge_face_counts()
        return bool(counts) and all(c == 2 for c in counts.values())

    def euler_characteristic(self) -> int:
        used = np.unique(self.triangles)
        return len(used) - len(self.edge_face_counts()) + len(self.triangles)


@dataclass
class PointCloud:
    """Points ordered as ``split`` condition points followed by free points."""

    points: np.ndarray
    split: int = 0
    normals: Optional[np.ndarray] = field(default=None)

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not 0 <= self.split <= len(self.points):
            raise ValueError(f"split {self.split} outside [0, {len(self.points)}]")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise ValueError("normals and points differ in length")
            if not np.allclose(np.linalg.norm(self.normals, axis=1), 1.0, rtol=0, atol=1e-6):
                raise ValueError("normals must have unit length")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def condition(self) -> np.ndarray:
        return self.points[: self.split]

    @property
    def free(self) -> np.ndarray:
        return self.points[self.split :]

    def with_normals(self, normals: Optional[np.ndarray]) -> "PointCloud":
        return replace(self, normals=normals)


def write_mesh_ply(mesh: TriMesh, path: str | Path) -> None:
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {len(mesh.triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def write_cloud_ply(cloud: PointCloud, path: str | Path) -> None:
    has_n = cloud.normals is not None
    lines = [
        "ply",
        "format ascii 1.0",
        f"comment split {cloud.split}",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if has_n:
        lines += ["property double nx", "property double ny", "property double nz"]
    lines.append("end_header")
    rows = np.hstack([cloud.points, cloud.normals]) if has_n else cloud.points
    lines += [" ".join(repr(float(c)) for c in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_header(lines: list[str]) -> tuple[dict, int]:
    if not lines or lines[0].strip() != "ply":
        raise ValueError("not a PLY file")
    info: dict = {"elements": [], "comments": []}
    for i, line in enumerate(lines[1:], start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "ascii":
            raise ValueError("only ASCII PLY is supported")
        if parts[0] == "comment":
            info["comments"].append(parts[1:])
        elif parts[0] == "element":
            info["elements"].append([parts[1], int(parts[2]), []])
        elif parts[0] == "property":
            info["elements"][-1][2].append(parts[-1])
        elif parts[0] == "end_header":
            return info, i + 1
    raise ValueError("PLY header not terminated")


def read_cloud_ply(path: str | Path) -> PointCloud:
    lines = Path(path).read_text().splitlines()
    info, start = _read_header(lines)
    name, count, props = info["elements"][0]
    if name != "vertex":
        raise ValueError("first PLY element must be 'vertex'")
    data = np.array([[float(v) for v in ln.split()] for ln in lines[start : start + count]])
    data = data.reshape(count, len(props))
    col = {p: i for i, p in enumerate(props)}
    pts = data[:, [col["x"], col["y"], col["z"]]]
    normals = data[:, [col["nx"], col["ny"], col["nz"]]] if "nx" in col else None
    split = 0
    for c in info["comments"]:
        if len(c) == 2 and c[0] == "split":
            split = int(c[1])
    return PointCloud(pts, split, normals)


def read_mesh_ply(path: str | Path) -> TriMesh:
    lines = Path(path).read_text().splitlines()
    info, start = _read_header(lines)
    (_, nv, props), (_, nf, _) = info["elements"][:2]
    col = {p: i for i, p in enumerate(props)}
    verts = np.array([[float(v) for v in ln.split()] for ln in lines[start : start + nv]])
    verts = verts.reshape(nv, len(props))[:, [col["x"], col["y"], col["z"]]]
    faces = np.array(
        [[int(v) for v in ln.split()[1:4]] for ln in lines[start + nv : start + nv + nf]],
        dtype=np.int64,
    )
    return TriMesh(verts, faces.reshape(-1, 3))
