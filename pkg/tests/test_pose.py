import numpy as np
import pytest

from xnocs.core import Camera, InputError, NocsMap
from xnocs.peeler import peel
from xnocs.pose import (
    Correspondences,
    DegenerateConfigurationError,
    correspondences_from_map,
    dlt_pose,
    rotation_angle,
    solve_projection,
)


def synthetic(rng, n=50):
    cam = Camera.look_at(0.5 + rng.normal(size=3) * 1.5 + [0, 0, 2.5], [0.5, 0.5, 0.5], 320, 240)
    X = rng.random((n, 3))
    return cam, X, cam.project(X)


def test_exact_recovery(rng):
    cam, X, px = synthetic(rng)
    est = dlt_pose(Correspondences(px, X))
    assert est.reprojection_rmse <= 1e-6
    assert rotation_angle(est.rotation, cam.rotation) <= 1e-6
    assert np.allclose(est.intrinsics, cam.intrinsics, rtol=1e-8)
    assert np.allclose(est.center, cam.center, atol=1e-8)
    assert np.allclose(est.project(X), px, atol=1e-6)


def test_five_points_rejected(rng):
    _, X, px = synthetic(rng, 5)
    with pytest.raises(InputError, match="insufficient correspondences"):
        dlt_pose(Correspondences(px, X))


def test_coplanar_rejected(rng):
    cam, X, _ = synthetic(rng, 30)
    X[:, 2] = 0.4
    with pytest.raises(DegenerateConfigurationError):
        dlt_pose(Correspondences(cam.project(X), X))


def test_noise_rmse_near_sigma(rng):
    rmses = []
    for _ in range(20):
        cam, X, px = synthetic(rng, 200)
        rmses.append(dlt_pose(Correspondences(px + rng.normal(scale=0.5, size=px.shape), X)).reprojection_rmse)
    # residual RMSE of a least-squares fit sits just below sigma * sqrt(2)
    assert 0.5 < np.median(rmses) <= 1.0


def test_normalization_changes_nothing_on_exact_data(rng):
    _, X, px = synthetic(rng)
    a = solve_projection(px, X, normalize=True)
    b = solve_projection(px, X, normalize=False)
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    assert min(np.abs(a - b).max(), np.abs(a + b).max()) <= 1e-9


def test_round_trip_through_peeler(test_meshes):
    cam = Camera.look_at([1.9, 1.3, 1.6], [0.5, 0.5, 0.5], 96, 96)
    visible, _ = peel(test_meshes["chair"], cam)
    corr = correspondences_from_map(visible, stride=2)
    est = dlt_pose(corr)
    assert est.reprojection_rmse <= 1e-4
    assert rotation_angle(est.rotation, cam.rotation) <= 1e-6
    assert np.allclose(est.center, cam.center, atol=1e-5)


class TestCorrespondencesFromMap:
    def test_stride_one_counts(self, rng):
        valid = rng.random((8, 9)) < 0.5
        corr = correspondences_from_map(NocsMap(rng.random((8, 9, 3)), valid))
        assert len(corr) == valid.sum()

    def test_pixel_convention(self):
        valid = np.zeros((4, 5), bool)
        valid[1, 3] = valid[2, 0] = True
        valid[3, 4] = valid[0, 0] = valid[0, 1] = valid[3, 3] = True
        coords = np.zeros((4, 5, 3))
        coords[1, 3] = [0.1, 0.2, 0.3]
        corr = correspondences_from_map(NocsMap(coords, valid))
        row = corr.pixels.tolist().index([3.0, 1.0])
        assert corr.points[row].tolist() == [0.1, 0.2, 0.3]

    def test_all_invalid(self):
        with pytest.raises(InputError):
            correspondences_from_map(NocsMap.empty(6, 6))


def test_rotation_angle_small():
    c, s = np.cos(1e-8), np.sin(1e-8)
    r = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    assert rotation_angle(np.eye(3), r) == pytest.approx(1e-8, rel=1e-6)
