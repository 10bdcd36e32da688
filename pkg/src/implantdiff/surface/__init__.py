from .cloud import PointCloud, TriMesh, read_cloud_ply, read_mesh_ply, write_cloud_ply, write_mesh_ply
from .mesh import NoSurfaceError, marching_cubes
from .normalize import NormalizationTransform, apply_normalization, fit_normalization
from .normals import estimate_normals
from .sampling import poisson_disk_sample, uniform_surface_sample

__all__ = [
    "NoSurfaceError",
    "NormalizationTransform",
    "PointCloud",
    "TriMesh",
    "apply_normalization",
    "estimate_normals",
    "fit_normalization",
    "marching_cubes",
    "poisson_disk_sample",
    "read_cloud_ply",
    "read_mesh_ply",
    "uniform_surface_sample",
    "write_cloud_ply",
    "write_mesh_ply",
]
