import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from implantdiff.voxel import (
    REAL,
    VolumeError,
    VoxelGrid,
    binary_opening,
    boolean_subtract,
    load_volume,
    median_filter3,
    save_volume,
)

from conftest import ball_mask


def brute_median(values):
    nx, ny, nz = values.shape
    out = np.zeros_like(values)
    for x, y, z in itertools.product(range(nx), range(ny), range(nz)):
        window = []
        for dx, dy, dz in itertools.product((-1, 0, 1), repeat=3):
            i, j, k = x + dx, y + dy, z + dz
            inside = 0 <= i < nx and 0 <= j < ny and 0 <= k < nz
            window.append(values[i, j, k] if inside else 0)
        out[x, y, z] = sorted(window)[13]
    return out


def l1_offsets(r):
    rng = range(-r, r + 1)
    return [o for o in itertools.product(rng, rng, rng) if sum(map(abs, o)) <= r]


def brute_erode(values, r):
    nx, ny, nz = values.shape
    out = np.zeros_like(values)
    for x, y, z in itertools.product(range(nx), range(ny), range(nz)):
        ok = True
        for dx, dy, dz in l1_offsets(r):
            i, j, k = x + dx, y + dy, z + dz
            if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz) or not values[i, j, k]:
                ok = False
                break
        out[x, y, z] = ok
    return out


def brute_dilate(values, r):
    out = np.zeros_like(values)
    nx, ny, nz = values.shape
    for x, y, z in np.argwhere(values):
        for dx, dy, dz in l1_offsets(r):
            i, j, k = x + dx, y + dy, z + dz
            if 0 <= i < nx and 0 <= j < ny and 0 <= k < nz:
                out[i, j, k] = 1
    return out


class TestIO:
    def test_roundtrip_ones(self, tmp_path):
        g = VoxelGrid(np.ones((2, 2, 2), np.uint8), (0.4, 0.5, 0.6))
        save_volume(g, tmp_path / "v")
        back = load_volume(tmp_path / "v")
        assert back == g
        assert int(back.values.sum()) == 8
        assert back.spacing == (0.4, 0.5, 0.6)

    def test_x_fastest_order(self, tmp_path):
        v = np.zeros((3, 2, 2), np.uint8)
        v[1, 0, 0] = 1
        save_volume(VoxelGrid(v), tmp_path / "v")
        assert (tmp_path / "v.raw").read_bytes()[:3] == b"\x00\x01\x00"

    def test_real_roundtrip_bit_exact(self, tmp_path, rng):
        g = VoxelGrid(rng.standard_normal((5, 4, 3)).astype(np.float32), (1.0, 2.0, 3.0), REAL)
        save_volume(g, tmp_path / "r.json")
        assert load_volume(tmp_path / "r.json") == g

    def test_sphere_byte_count(self, tmp_path):
        save_volume(VoxelGrid(ball_mask(64, 20)), tmp_path / "s")
        assert (tmp_path / "s.raw").stat().st_size == 64**3

    def test_large_header_accepted(self, tmp_path):
        n = 512
        (tmp_path / "big.raw").write_bytes(bytes(n**3))
        (tmp_path / "big.json").write_text('{"dims": [512, 512, 512], "spacing_mm": [0.45, 0.45, 0.45], "dtype": "uint8"}')
        g = load_volume(tmp_path / "big")
        assert g.dims == (512, 512, 512)

    def test_short_payload(self, tmp_path):
        save_volume(VoxelGrid(np.ones((2, 2, 2), np.uint8)), tmp_path / "v")
        raw = tmp_path / "v.raw"
        raw.write_bytes(raw.read_bytes()[:-1])
        with pytest.raises(VolumeError, match="size mismatch"):
            load_volume(tmp_path / "v")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_volume(tmp_path / "nope")

    def test_binary_payload_with_two(self, tmp_path):
        save_volume(VoxelGrid(np.ones((2, 2, 2), np.uint8)), tmp_path / "v")
        (tmp_path / "v.raw").write_bytes(b"\x01" * 7 + b"\x02")
        with pytest.raises(VolumeError):
            load_volume(tmp_path / "v")

    def test_reject_two_before_write(self, tmp_path):
        g = VoxelGrid(np.ones((2, 2, 2), np.uint8))
        g.values[0, 0, 0] = 2
        with pytest.raises(VolumeError):
            save_volume(g, tmp_path / "v")
        assert not (tmp_path / "v.raw").exists()

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.uint8, st.tuples(*[st.integers(1, 6)] * 3), elements=st.integers(0, 1)))
    def test_roundtrip_property(self, tmp_path_factory, values):
        path = tmp_path_factory.mktemp("rt") / "v"
        g = VoxelGrid(values, (0.45, 0.45, 0.45))
        save_volume(g, path)
        assert load_volume(path) == g


class TestSubtract:
    def test_self(self, rng):
        a = VoxelGrid((rng.random((8, 8, 8)) < 0.5).astype(np.uint8))
        assert not boolean_subtract(a, a).values.any()

    def test_ones_minus_zeros(self):
        a = VoxelGrid(np.ones((4, 4, 4), np.uint8))
        b = VoxelGrid(np.zeros((4, 4, 4), np.uint8))
        assert boolean_subtract(a, b) == a

    def test_sphere_cap(self):
        s = ball_mask(24, 9)
        cut = s.copy()
        cut[:, :, 17:] = 0
        out = boolean_subtract(VoxelGrid(s), VoxelGrid(cut)).values
        expected = np.zeros_like(s)
        for idx in itertools.product(range(24), repeat=3):
            expected[idx] = 1 if (s[idx] == 1 and cut[idx] == 0) else 0
        assert np.array_equal(out, expected)
        assert out.sum() > 0

    def test_shape_mismatch(self):
        with pytest.raises(VolumeError):
            boolean_subtract(VoxelGrid(np.ones((2, 2, 2), np.uint8)), VoxelGrid(np.ones((2, 2, 3), np.uint8)))

    def test_spacing_mismatch(self):
        a = VoxelGrid(np.ones((2, 2, 2), np.uint8), (1, 1, 1))
        with pytest.raises(VolumeError):
            boolean_subtract(a, VoxelGrid(np.ones((2, 2, 2), np.uint8), (1, 1, 2)))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.uint8, (5, 5, 5), elements=st.integers(0, 1)), arrays(np.uint8, (5, 5, 5), elements=st.integers(0, 1)))
    def test_laws(self, a, b):
        ga, gb = VoxelGrid(a, (0.4, 0.4, 0.4)), VoxelGrid(b, (0.4, 0.4, 0.4))
        zeros = VoxelGrid(np.zeros_like(a), (0.4, 0.4, 0.4))
        assert boolean_subtract(ga, zeros) == ga
        assert not boolean_subtract(ga, ga).values.any()
        out = boolean_subtract(ga, gb)
        assert np.all(out.values <= a)
        assert out.spacing == ga.spacing and out.dims == ga.dims


class TestMedian:
    def test_constant_zero(self):
        g = VoxelGrid(np.zeros((5, 5, 5), np.uint8))
        assert median_filter3(g) == g

    def test_isolated_voxel(self):
        v = np.zeros((5, 5, 5), np.uint8)
        v[2, 2, 2] = 1
        assert not median_filter3(VoxelGrid(v)).values.any()

    def test_random_matches_sort_oracle(self, rng):
        v = (rng.random((16, 16, 16)) < 0.5).astype(np.uint8)
        assert np.array_equal(median_filter3(VoxelGrid(v)).values, brute_median(v))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.uint8, (6, 6, 6), elements=st.integers(0, 1)), arrays(np.uint8, (6, 6, 6), elements=st.integers(0, 1)))
    def test_monotone(self, x, extra):
        y = x | extra
        fx = median_filter3(VoxelGrid(x)).values
        fy = median_filter3(VoxelGrid(y)).values
        assert np.all(fx <= fy)


class TestOpening:
    def test_zeros(self):
        g = VoxelGrid(np.zeros((6, 6, 6), np.uint8))
        assert binary_opening(g, 1) == g

    def test_cube_matches_oracle(self):
        v = np.zeros((15, 15, 15), np.uint8)
        v[3:12, 3:12, 3:12] = 1
        out = binary_opening(VoxelGrid(v), 1).values
        assert np.array_equal(out, brute_dilate(brute_erode(v, 1), 1))
        # the opening trims only the cube's 12 edges
        assert np.array_equal(out[4:11, 4:11, 4:11], v[4:11, 4:11, 4:11])
        assert np.all(out <= v)

    def test_single_voxel(self):
        v = np.zeros((5, 5, 5), np.uint8)
        v[2, 2, 2] = 1
        assert not binary_opening(VoxelGrid(v), 1).values.any()

    @pytest.mark.parametrize("radius", [1, 2])
    def test_random_matches_oracle(self, rng, radius):
        v = (rng.random((10, 10, 10)) < 0.7).astype(np.uint8)
        expected = brute_dilate(brute_erode(v, radius), radius)
        assert np.array_equal(binary_opening(VoxelGrid(v), radius).values, expected)

    def test_idempotent_on_random_grids(self, rng):
        for _ in range(50):
            g = VoxelGrid((rng.random((16, 16, 16)) < rng.uniform(0.4, 0.8)).astype(np.uint8), (0.4, 0.4, 0.4))
            once = binary_opening(g, 1)
            assert binary_opening(once, 1) == once
            assert np.all(once.values <= g.values)
            assert once.spacing == g.spacing
