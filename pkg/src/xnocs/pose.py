"""Camera pose in NOCS from pixel/NOCS correspondences via the DLT.

The projection matrix is estimated by homogeneous least squares on
Hartley-normalized data and split into intrinsics and rotation with an RQ
decomposition. Because NOCS is a normalized space, the recovered
translation is only meaningful up to the object's unknown metric scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import InputError, NocsMap, NumericalError

MIN_CORRESPONDENCES = 6


class DegenerateConfigurationError(NumericalError):
    pass


@dataclass(frozen=True, eq=False)
class Correspondences:
    pixels: np.ndarray  # (N, 2) as (u, v)
    points: np.ndarray  # (N, 3) NOCS coordinates

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(px) != len(pts):
            raise InputError("pixels and points must have the same length")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    projection: np.ndarray  # 3x4, ||projection[2, :3]|| == 1
    intrinsics: np.ndarray  # upper triangular, positive diagonal, [2, 2] == 1
    rotation: np.ndarray
    translation: np.ndarray
    reprojection_rmse: float

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def project(self, points: np.ndarray) -> np.ndarray:
        h = np.hstack([points, np.ones((len(points), 1))]) @ self.projection.T
        return h[:, :2] / h[:, 2:3]

    def to_dict(self) -> dict:
        return {
            "projection": self.projection.tolist(),
            "intrinsics": self.intrinsics.tolist(),
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "camera_center": self.center.tolist(),
            "reprojection_rmse": self.reprojection_rmse,
        }


def _similarity(points: np.ndarray, target_mean_norm: float) -> np.ndarray:
    """Homogeneous transform taking the centroid to 0 and the mean norm to ``target_mean_norm``."""
    dim = points.shape[1]
    c = points.mean(axis=0)
    mean_norm = np.linalg.norm(points - c, axis=1).mean()
    if mean_norm == 0:
        raise DegenerateConfigurationError("degenerate configuration: all points coincide")
    s = target_mean_norm / mean_norm
    T = np.eye(dim + 1)
    T[:dim, :dim] *= s
    T[:dim, dim] = -s * c
    return T


def _homog(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((len(x), 1))])


def solve_projection(pixels: np.ndarray, points: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Algebraic DLT solution; sign and scale are not yet fixed."""
    if normalize:
        T = _similarity(pixels, np.sqrt(2.0))
        U = _similarity(points, np.sqrt(3.0))
    else:
        T, U = np.eye(3), np.eye(4)
    x = _homog(pixels) @ T.T
    X = _homog(points) @ U.T
    n = len(x)
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = X
    A[0::2, 8:12] = -x[:, 0:1] * X
    A[1::2, 4:8] = X
    A[1::2, 8:12] = -x[:, 1:2] * X
    _, _, vt = np.linalg.svd(A)
    P = vt[-1].reshape(3, 4)
    return np.linalg.solve(T, P @ U)


def dlt_pose(corr: Correspondences, normalize: bool = True) -> PoseEstimate:
    pixels, points = corr.pixels, corr.points
    if len(corr) < MIN_CORRESPONDENCES:
        raise InputError(
            f"insufficient correspondences: got {len(corr)}, need at least {MIN_CORRESPONDENCES}"
        )
    sv = np.linalg.svd(points - points.mean(axis=0), compute_uv=False)
    if sv[-1] <= 1e-9:
        raise DegenerateConfigurationError("degenerate configuration: 3D points are coplanar")

    P = solve_projection(pixels, points, normalize=normalize)
    P = P / np.linalg.norm(P[2, :3])
    if (P @ np.append(points.mean(axis=0), 1.0))[2] < 0:
        P = -P

    K, R = scipy.linalg.rq(P[:, :3])
    D = np.diag(np.where(np.diag(K) < 0, -1.0, 1.0))
    K, R = K @ D, D @ R
    if np.linalg.det(R) < 0:
        raise DegenerateConfigurationError("degenerate configuration: projection implies a mirrored camera")
    s = K[2, 2]
    K = K / s
    P = P / s
    t = np.linalg.solve(K, P[:, 3])

    h = _homog(points) @ P.T
    reproj = h[:, :2] / h[:, 2:3]
    rmse = float(np.sqrt(np.mean(np.sum((reproj - pixels) ** 2, axis=1))))
    return PoseEstimate(P, K, R, t, rmse)


def correspondences_from_map(nmap: NocsMap, stride: int = 1) -> Correspondences:
    """Pixel-center/NOCS pairs for valid pixels on a ``stride`` grid."""
    if stride < 1:
        raise InputError("stride must be a positive integer")
    v, u = np.mgrid[0 : nmap.height : stride, 0 : nmap.width : stride]
    ok = nmap.valid[v, u]
    if ok.sum() < MIN_CORRESPONDENCES:
        raise InputError(
            f"too few valid pixels at stride {stride}: {int(ok.sum())} < {MIN_CORRESPONDENCES}"
        )
    pixels = np.stack([u[ok], v[ok]], axis=1).astype(np.float64)
    return Correspondences(pixels, nmap.coords[v[ok], u[ok]])


def rotation_angle(r1: np.ndarray, r2: np.ndarray) -> float:
    """Geodesic angle (radians) between two rotations."""
    c = (np.trace(r1.T @ r2) - 1.0) / 2.0
    # arccos is ill-conditioned near 1; use the skew part instead
    rel = r1.T @ r2
    s = np.linalg.norm([rel[2, 1] - rel[1, 2], rel[0, 2] - rel[2, 0], rel[1, 0] - rel[0, 1]]) / 2.0
    return float(np.arctan2(s, c))
