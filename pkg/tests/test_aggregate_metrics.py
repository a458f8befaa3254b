import numpy as np
import pytest

from oracles import chamfer_loops, point_mesh_distance
from xnocs import shapes
from xnocs.aggregate import readout, union, voxel_keys
from xnocs.core import InputError, Mesh, NocsMap, PointCloud
from xnocs.metrics import EmptyCloudError, chamfer, chamfer_bruteforce, sample_surface
from xnocs.peeler import peel, render_view, sample_cameras


class TestReadout:
    def test_all_invalid(self):
        assert len(readout(NocsMap.empty(5, 4))) == 0

    def test_counts_valid_pixels(self, rng):
        valid = rng.random((6, 7)) < 0.4
        cloud = readout(NocsMap(rng.random((6, 7, 3)), valid))
        assert len(cloud) == valid.sum()

    def test_row_major_order(self):
        coords = np.arange(12, dtype=float).reshape(2, 2, 3) / 12
        cloud = readout(NocsMap(coords, np.ones((2, 2), bool)))
        assert np.array_equal(cloud.points, coords.reshape(-1, 3))

    def test_points_lie_on_mesh(self, test_meshes):
        mesh = test_meshes["chair"]
        cam = sample_cameras(1, seed=2, width=32, height=32)[0]
        for nmap in peel(mesh, cam):
            cloud = readout(nmap)
            assert len(cloud) > 0
            for p in cloud.points[:: max(1, len(cloud) // 60)]:
                assert point_mesh_distance(p, mesh.vertices, mesh.triangles) <= 1e-6

    def test_colors_from_peeled_map_and_rgb(self, sphere):
        cam = sample_cameras(1, seed=1, width=16, height=16)[0]
        maps = render_view(sphere, cam)
        colored = readout(maps["occluded"], maps["peeled_color"])
        assert np.array_equal(colored.colors, maps["peeled_color"].coords[maps["occluded"].valid])
        rgb = np.zeros((16, 16, 3), np.uint8) + np.array([255, 0, 51], np.uint8)
        assert np.allclose(readout(maps["visible"], rgb).colors, [1.0, 0.0, 0.2])

    def test_color_shape_mismatch(self):
        with pytest.raises(InputError):
            readout(NocsMap.empty(4, 4), np.zeros((3, 4, 3)))


class TestUnion:
    def test_with_empty(self, rng):
        a = PointCloud(rng.random((10, 3)))
        assert np.array_equal(union([a, PointCloud.empty()]).points, a.points)

    def test_plain_union_keeps_everything(self, rng):
        a, b = PointCloud(rng.random((10, 3))), PointCloud(rng.random((7, 3)))
        assert len(union([a, b])) == 17

    def test_order_invariant_voxels(self, rng):
        a, b = PointCloud(rng.random((300, 3))), PointCloud(rng.random((200, 3)))
        eps = 1 / 16
        ab = {tuple(k) for k in voxel_keys(union([a, b], eps).points, eps)}
        ba = {tuple(k) for k in voxel_keys(union([b, a], eps).points, eps)}
        assert ab == ba
        assert len(ab) == len(union([a, b], eps))

    def test_identical_clouds_dedup(self, rng):
        a = PointCloud(rng.random((500, 3)))
        assert len(union([a, a], 1 / 512)) == len(union([a], 1 / 512))

    def test_colors_kept_only_when_all_colored(self, rng):
        a = PointCloud(rng.random((3, 3)), rng.random((3, 3)))
        b = PointCloud(rng.random((2, 3)))
        assert union([a, a]).colors.shape == (6, 3)
        assert union([a, b]).colors is None

    def test_bad_epsilon(self, rng):
        with pytest.raises(InputError):
            union([PointCloud(rng.random((3, 3)))], 0.0)


class TestChamfer:
    def test_two_point(self):
        res = chamfer(np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]]))
        assert (res.forward_term, res.backward_term, res.total_scaled) == (1.0, 1.0, 200.0)

    def test_self_distance(self, rng):
        s = rng.random((300, 3))
        assert chamfer(s, s).total_scaled == 0.0
        assert chamfer_bruteforce(s, s).total_scaled == 0.0

    def test_bruteforce_matches_loops(self, rng):
        a, b = rng.random((9, 3)), rng.random((13, 3))
        fwd, bwd = chamfer_loops(a, b)
        res = chamfer_bruteforce(a, b)
        assert res.forward_term == pytest.approx(fwd, rel=1e-12)
        assert res.backward_term == pytest.approx(bwd, rel=1e-12)

    def test_tree_matches_bruteforce(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            a = rng.random((int(rng.integers(1, 800)), 3))
            b = rng.normal(size=(int(rng.integers(1, 800)), 3))
            fast, slow = chamfer(a, b), chamfer_bruteforce(a, b)
            assert fast.forward_term == pytest.approx(slow.forward_term, rel=1e-9)
            assert fast.backward_term == pytest.approx(slow.backward_term, rel=1e-9)

    def test_swap_symmetry(self, rng):
        a, b = rng.random((40, 3)), rng.random((25, 3))
        ab, ba = chamfer_bruteforce(a, b), chamfer_bruteforce(b, a)
        assert (ab.forward_term, ab.backward_term) == (ba.backward_term, ba.forward_term)
        assert ab.total_scaled == ba.total_scaled

    def test_translation_sensitive(self, rng):
        a = rng.random((40, 3))
        assert chamfer_bruteforce(a, a + [0.01, 0, 0]).total_scaled > 0

    def test_empty_rejected(self):
        with pytest.raises(EmptyCloudError):
            chamfer(np.zeros((0, 3)), np.zeros((1, 3)))


class TestSampleSurface:
    def test_single_triangle_barycentric(self):
        v = np.array([[0.1, 0.2, 0.3], [0.9, 0.1, 0.4], [0.3, 0.8, 0.7]])
        pts = sample_surface(Mesh(v, np.array([[0, 1, 2]])), 2000, seed=1).points
        A = np.stack([v[1] - v[0], v[2] - v[0]], axis=1)
        uv, *_ = np.linalg.lstsq(A, (pts - v[0]).T, rcond=None)
        assert np.allclose(A @ uv, (pts - v[0]).T, atol=1e-12)
        assert uv.min() >= -1e-12 and uv.sum(axis=0).max() <= 1 + 1e-12

    def test_equal_area_split(self):
        left = np.array([[0.0, 0, 0], [0.4, 0, 0], [0, 0.4, 0]])
        right = left + [0.6, 0, 0]
        mesh = Mesh(np.vstack([left, right]), np.array([[0, 1, 2], [3, 4, 5]]))
        n = 1_000_000
        pts = sample_surface(mesh, n, seed=3).points
        count = int(np.sum(pts[:, 0] < 0.5))
        assert abs(count - n / 2) <= 3 * np.sqrt(n * 0.25)

    def test_degenerate_gets_nothing(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5], [6, 6, 6], [7, 7, 7.0]])
        pts = sample_surface(Mesh(v, np.array([[0, 1, 2], [3, 4, 5]])), 10_000, seed=0).points
        assert pts.max() <= 1.0

    def test_colors_interpolated(self):
        mesh = shapes.icosphere(subdivisions=1, color=(0.5, 0.25, 1.0))
        cloud = sample_surface(mesh, 100)
        assert np.allclose(cloud.colors, [0.5, 0.25, 1.0])

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            sample_surface(Mesh(np.zeros((0, 3)), np.zeros((0, 3), int)), 10)
