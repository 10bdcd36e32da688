import numpy as np
import pytest
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from implantdiff.surface import (
    NoSurfaceError,
    NormalizationTransform,
    PointCloud,
    TriMesh,
    apply_normalization,
    estimate_normals,
    fit_normalization,
    marching_cubes,
    poisson_disk_sample,
    read_cloud_ply,
    read_mesh_ply,
    uniform_surface_sample,
    write_cloud_ply,
    write_mesh_ply,
)
from implantdiff.rng import make_rng
from implantdiff.synthetic import PhantomSpec, make_phantom
from implantdiff.voxel import VoxelGrid

from conftest import ball_mask


def on_some_triangle(mesh: TriMesh, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """For each point, whether a triangle contains it (plane + barycentric test)."""
    a, b, c = (mesh.vertices[mesh.triangles[:, i]] for i in range(3))
    e0, e1 = b - a, c - a
    n = np.cross(e0, e1)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    d00, d01, d11 = (e0 * e0).sum(1), (e0 * e1).sum(1), (e1 * e1).sum(1)
    den = d00 * d11 - d01 * d01
    found = np.zeros(len(points), dtype=bool)
    for i, p in enumerate(points):
        w = p - a
        plane = np.abs((w * n).sum(1))
        d20, d21 = (w * e0).sum(1), (w * e1).sum(1)
        v = (d11 * d20 - d01 * d21) / den
        u = (d00 * d21 - d01 * d20) / den
        ok = (plane < tol) & (v >= -tol) & (u >= -tol) & (u + v <= 1 + tol)
        found[i] = ok.any()
    return found


class TestMarchingCubes:
    def test_single_voxel_closed(self):
        v = np.zeros((5, 5, 5), np.uint8)
        v[2, 2, 2] = 1
        mesh = marching_cubes(VoxelGrid(v))
        assert mesh.is_watertight()
        assert mesh.euler_characteristic() == 2
        assert len(mesh.triangles) == 8

    def test_empty_and_full(self):
        with pytest.raises(NoSurfaceError):
            marching_cubes(VoxelGrid(np.zeros((4, 4, 4), np.uint8)))
        with pytest.raises(NoSurfaceError):
            marching_cubes(VoxelGrid(np.ones((4, 4, 4), np.uint8)))

    def test_sphere_volume_and_watertight(self, sphere64):
        mesh = marching_cubes(sphere64)
        assert mesh.is_watertight()
        assert mesh.signed_volume() == pytest.approx(4 / 3 * np.pi * 1000, rel=0.05)

    def test_spacing_applied(self):
        v = ball_mask(16, 4)
        iso = marching_cubes(VoxelGrid(v))
        aniso = marching_cubes(VoxelGrid(v, (0.5, 1.0, 2.0)))
        np.testing.assert_allclose(aniso.vertices, iso.vertices * [0.5, 1.0, 2.0])

    def test_vertices_on_grid_edges(self):
        mesh = marching_cubes(VoxelGrid(ball_mask(20, 6)))
        frac = np.abs(mesh.vertices - np.round(mesh.vertices))
        # one coordinate at an edge midpoint, the other two on grid lines
        assert np.all(np.sum(np.isclose(frac, 0.5), axis=1) == 1)
        assert np.all(np.sum(np.isclose(frac, 0.0), axis=1) == 2)

    @pytest.mark.parametrize("radius", [1.5, 3.0, 4.7, 7.2])
    def test_digitized_balls_watertight(self, radius):
        mesh = marching_cubes(VoxelGrid(ball_mask(20, radius, center=9.3)))
        counts = mesh.edge_face_counts()
        assert set(counts.values()) == {2}

    def test_touching_border_still_closed(self):
        v = np.zeros((6, 6, 6), np.uint8)
        v[:3, :3, :3] = 1
        assert marching_cubes(VoxelGrid(v)).is_watertight()

    def test_mesh_ply_roundtrip(self, tmp_path):
        mesh = marching_cubes(VoxelGrid(ball_mask(10, 3)))
        write_mesh_ply(mesh, tmp_path / "m.ply")
        back = read_mesh_ply(tmp_path / "m.ply")
        np.testing.assert_array_equal(back.vertices, mesh.vertices)
        np.testing.assert_array_equal(back.triangles, mesh.triangles)


@pytest.fixture(scope="module")
def ball_mesh():
    return marching_cubes(VoxelGrid(ball_mask(32, 8)))


class TestPoissonDisk:
    def test_exact_count(self, ball_mesh):
        assert len(poisson_disk_sample(ball_mesh, 500, 0)) == 500

    def test_implant_count(self):
        ph = make_phantom(PhantomSpec())
        cloud = poisson_disk_sample(marching_cubes(ph.implant), 3072, 3)
        assert len(cloud) == 3072

    @pytest.mark.slow
    def test_skull_count(self):
        ph = make_phantom(PhantomSpec())
        cloud = poisson_disk_sample(marching_cubes(ph.defective), 27648, 3)
        assert len(cloud) == 27648

    def test_single_point_on_triangle(self, ball_mesh):
        cloud = poisson_disk_sample(ball_mesh, 1, 42)
        assert len(cloud) == 1
        assert on_some_triangle(ball_mesh, cloud.points).all()

    def test_points_on_mesh(self, ball_mesh):
        cloud = poisson_disk_sample(ball_mesh, 300, 5)
        assert on_some_triangle(ball_mesh, cloud.points).all()

    def test_deterministic(self, ball_mesh):
        a = poisson_disk_sample(ball_mesh, 200, 9).points
        b = poisson_disk_sample(ball_mesh, 200, 9).points
        assert np.array_equal(a, b)

    def test_blue_noise_beats_uniform(self, ball_mesh):
        wins = 0
        for seed in range(10):
            blue = poisson_disk_sample(ball_mesh, 400, seed).points
            white = uniform_surface_sample(ball_mesh, 400, make_rng(1000 + seed))
            wins += pdist(blue).min() > pdist(white).min()
        assert wins >= 9

    def test_zero_area(self):
        mesh = TriMesh(np.zeros((3, 3)) + [[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
        with pytest.raises(ValueError):
            poisson_disk_sample(mesh, 5, 0)


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5**0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


class TestNormals:
    def test_plane(self, rng):
        pts = np.column_stack([rng.uniform(-1, 1, (200, 2)), np.zeros(200)])
        n = estimate_normals(PointCloud(pts), 8).normals
        np.testing.assert_allclose(np.abs(n[:, 2]), 1.0, atol=1e-9)
        assert len(np.unique(np.sign(n[:, 2]))) == 1

    def test_sphere_outward(self):
        pts = fibonacci_sphere(800) + [5.0, -2.0, 1.0]
        cloud = estimate_normals(PointCloud(pts), 8)
        out = np.einsum("ij,ij->i", cloud.normals, pts - pts.mean(0)) > 0
        assert out.mean() >= 0.95

    def test_sphere_neighbour_consistency(self, ball_mesh):
        cloud = estimate_normals(poisson_disk_sample(ball_mesh, 600, 1), 8)
        _, idx = cKDTree(cloud.points).query(cloud.points, 8)
        dots = np.einsum("ikj,ij->ik", cloud.normals[idx[:, 1:]], cloud.normals)
        assert (dots > 0).mean() >= 0.99

    def test_unit_length(self, rng):
        cloud = estimate_normals(PointCloud(rng.standard_normal((50, 3))), 6)
        np.testing.assert_allclose(np.linalg.norm(cloud.normals, axis=1), 1.0, atol=1e-12)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            estimate_normals(PointCloud(np.zeros((2, 3)) + [[0, 0, 0], [1, 0, 0]]), 3)

    def test_centroid_orientation_on_slab(self, rng):
        # both faces of a thin curved slab: a spanning tree hops between them
        ang = rng.uniform(-0.3, 0.3, (2, 120))
        r = np.where(np.arange(120) < 60, 3.0, 2.2)
        pts = np.column_stack([r * np.sin(ang[0]), r * np.sin(ang[1]), r * np.cos(ang[0]) * np.cos(ang[1])])
        cloud = estimate_normals(PointCloud(pts), 8, orient="centroid")
        radial = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        side = np.einsum("ij,ij->i", cloud.normals, radial)
        assert (side[:60] > 0).mean() >= 0.9 and (side[60:] < 0).mean() >= 0.9
        np.testing.assert_allclose(np.linalg.norm(cloud.normals, axis=1), 1.0, atol=1e-12)
        with pytest.raises(ValueError):
            estimate_normals(PointCloud(pts), 8, orient="up")

    def test_shell_with_hole_orientation(self):
        ph = make_phantom(PhantomSpec())
        mesh = marching_cubes(ph.defective)
        cloud = estimate_normals(poisson_disk_sample(mesh, 512, 0), 8)
        a, b, c = (mesh.vertices[mesh.triangles[:, i]] for i in range(3))
        fn = np.cross(b - a, c - a)
        fn /= np.linalg.norm(fn, axis=1, keepdims=True)
        _, nearest = cKDTree((a + b + c) / 3).query(cloud.points)
        agree = np.einsum("ij,ij->i", cloud.normals, fn[nearest]) > 0
        assert agree.mean() >= 0.95


class TestNormalization:
    def test_box_0_10(self):
        pts = np.array([[0, 0, 0], [10, 10, 10], [3, 4, 5]], float)
        tf = fit_normalization(PointCloud(pts))
        assert tf.scale == pytest.approx(0.6)
        np.testing.assert_allclose(tf.forward(np.array([[5.0, 5.0, 5.0]])), 0.0, atol=1e-15)

    def test_identity_for_unit_box(self, rng):
        pts = np.vstack([rng.uniform(-3, 3, (20, 3)), [[-3, -3, -3], [3, 3, 3]]])
        tf = fit_normalization(pts)
        assert tf.scale == 1.0
        assert tf.offset == (0.0, 0.0, 0.0)

    def test_single_point(self):
        with pytest.raises(ValueError):
            fit_normalization(np.array([[1.0, 2.0, 3.0]]))

    def test_roundtrip(self, rng):
        cloud = PointCloud(rng.uniform(-50, 80, (100, 3)), split=40)
        tf = fit_normalization(cloud)
        back = apply_normalization(apply_normalization(cloud, tf), tf, inverse=True)
        np.testing.assert_allclose(back.points, cloud.points, rtol=0, atol=1e-12)
        assert back.split == 40

    def test_corner_and_range(self, rng):
        pts = rng.uniform([0, 10, 20], [30, 25, 22], (200, 3))
        tf = fit_normalization(pts)
        y = tf.forward(pts)
        assert np.all(np.abs(y) <= 3 + 1e-9)
        corner = tf.forward(pts.min(0)[None])[0]
        assert np.abs(corner).max() <= 3 + 1e-9
        # aspect ratio kept: only the longest axis spans the full range
        np.testing.assert_allclose(y[:, 0].max() - y[:, 0].min(), 6.0)
        assert y[:, 1].max() - y[:, 1].min() < 6.0

    def test_center_to_origin(self, rng):
        pts = rng.uniform(-7, 13, (30, 3))
        tf = fit_normalization(pts)
        center = (pts.min(0) + pts.max(0)) / 2
        np.testing.assert_allclose(tf.forward(center[None]), 0.0, atol=1e-14)

    def test_invalid_scale(self):
        with pytest.raises(ValueError):
            NormalizationTransform(0.0, (0, 0, 0))


def test_cloud_ply_roundtrip(tmp_path, rng):
    pts = rng.standard_normal((20, 3))
    n = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    cloud = PointCloud(pts, split=7, normals=n)
    write_cloud_ply(cloud, tmp_path / "c.ply")
    back = read_cloud_ply(tmp_path / "c.ply")
    assert back.split == 7
    np.testing.assert_array_equal(back.points, pts)
    np.testing.assert_array_equal(back.normals, n)


def test_cloud_invariants():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((3, 3)), split=4)
    with pytest.raises(ValueError):
        PointCloud(np.zeros((1, 3)), normals=np.array([[0.0, 0.0, 2.0]]))
