"""Map readout and multiview union."""
from __future__ import annotations

from typing import Iterable, Optional, Union

import numpy as np

from .core import InputError, NocsMap, PointCloud


def readout(nmap: NocsMap, color: Optional[Union[NocsMap, np.ndarray]] = None) -> PointCloud:
    """One point per valid pixel, in row-major pixel order.

    ``color`` may be a peeled-color map or an RGB image (``(H, W, 3)``,
    floats in [0, 1] or uint8). Colors are copied from the same pixel.
    """
    valid = nmap.valid
    points = nmap.coords[valid]
    if color is None:
        return PointCloud(points)
    if isinstance(color, NocsMap):
        rgb = color.coords
    else:
        rgb = np.asarray(color)
        if rgb.dtype == np.uint8:
            rgb = rgb.astype(np.float64) / 255.0
        if rgb.ndim == 3 and rgb.shape[2] == 4:
            rgb = rgb[..., :3]
    if rgb.shape[:2] != nmap.shape or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InputError(f"color source shape {rgb.shape} does not match map {nmap.shape}")
    return PointCloud(points, np.clip(rgb[valid], 0.0, 1.0))


def voxel_keys(points: np.ndarray, epsilon: float) -> np.ndarray:
    return np.floor(points / epsilon).astype(np.int64)


def union(clouds: Iterable[PointCloud], dedup_epsilon: Optional[float] = None) -> PointCloud:
    """Point-set union of readouts.

    Without ``dedup_epsilon`` this is plain concatenation. With it, points
    are thinned on a voxel grid of cell size ``dedup_epsilon``, keeping the
    first point encountered in each occupied cell.
    """
    clouds = list(clouds)
    if not clouds:
        return PointCloud.empty()
    points = np.concatenate([c.points for c in clouds], axis=0)
    has_colors = all(c.colors is not None for c in clouds) and len(points) > 0
    colors = np.concatenate([c.colors for c in clouds], axis=0) if has_colors else None
    merged = PointCloud(points, colors)
    if dedup_epsilon is None or len(merged) == 0:
        return merged
    if not dedup_epsilon > 0:
        raise InputError("dedup epsilon must be positive")
    _, first = np.unique(voxel_keys(points, dedup_epsilon), axis=0, return_index=True)
    return merged.subset(np.sort(first))
