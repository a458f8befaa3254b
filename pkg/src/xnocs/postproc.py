"""Map smoothing and point-cloud cleanup applied before visualizing reconstructions."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .core import InputError, NocsMap, PointCloud

DEFAULT_SIGMA_SPATIAL = 2.0
DEFAULT_SIGMA_RANGE = 0.05
DEFAULT_RADIUS = 5
DEFAULT_K = 16
DEFAULT_STDDEV_MULT = 2.0


def bilateral_filter(
    nmap: NocsMap,
    sigma_spatial: float = DEFAULT_SIGMA_SPATIAL,
    sigma_range: float = DEFAULT_SIGMA_RANGE,
    radius: int = DEFAULT_RADIUS,
) -> NocsMap:
    """Joint bilateral filter on NOCS coordinates.

    The range kernel uses the full 3D coordinate distance. Invalid pixels
    neither receive nor contribute values, and weights are renormalized
    over the valid neighbors of each pixel.
    """
    if not (sigma_spatial > 0 and sigma_range > 0):
        raise InputError("bilateral sigmas must be positive")
    if radius < 0:
        raise InputError("bilateral radius must be non-negative")
    radius = int(radius)
    h, w = nmap.shape
    coords, valid = nmap.coords, nmap.valid
    pad_c = np.pad(coords, ((radius, radius), (radius, radius), (0, 0)))
    pad_v = np.pad(valid, radius)

    # Accumulate offsets from the center value so that a constant
    # neighborhood reproduces the center bit-for-bit.
    acc = np.zeros_like(coords)
    wsum = np.zeros((h, w))
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            c = pad_c[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            v = pad_v[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            diff = c - coords
            w_s = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma_spatial**2))
            w_r = np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / (2.0 * sigma_range**2))
            wt = np.where(v & valid, w_s * w_r, 0.0)
            acc += wt[..., None] * diff
            wsum += wt
    safe = np.where(wsum > 0, wsum, 1.0)
    out = coords + acc / safe[..., None]
    return NocsMap(np.clip(out, 0.0, 1.0), valid, nmap.kind)


def knn_mean_distance(points: np.ndarray, k: int) -> np.ndarray:
    """Mean distance from each point to its ``k`` nearest other points."""
    dist, _ = cKDTree(points).query(points, k=k + 1)
    return dist[:, 1:].mean(axis=1)


def statistical_outlier_removal(
    cloud: PointCloud, k_neighbors: int = DEFAULT_K, stddev_mult: float = DEFAULT_STDDEV_MULT
) -> PointCloud:
    """Drop points whose mean k-NN distance exceeds ``mean + stddev_mult * std``.

    The statistics are taken over all points (sample standard deviation);
    colors follow their points.
    """
    if k_neighbors < 1:
        raise InputError("k_neighbors must be at least 1")
    if len(cloud) <= k_neighbors:
        raise InputError(f"cloud of {len(cloud)} points is too small for k_neighbors={k_neighbors}")
    mean_d = knn_mean_distance(cloud.points, k_neighbors)
    threshold = mean_d.mean() + stddev_mult * mean_d.std(ddof=1)
    return cloud.subset(np.flatnonzero(mean_d <= threshold))
