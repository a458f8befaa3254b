"""Canonicalize meshes into the unit NOCS cube.

The mapping is ``q = (p - center) * scale + 0.5`` where ``center`` is the
axis-aligned bounding-box center and ``scale`` is the reciprocal of the
bounding-box diagonal, so every output mesh has a unit-diagonal box
centered at ``(0.5, 0.5, 0.5)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import InputError, Mesh, PointCloud

NOCS_CENTER = np.array([0.5, 0.5, 0.5])


class NormalizationError(InputError):
    pass


@dataclass(frozen=True)
class NormalizationRecord:
    """``center`` is in model units; ``scale`` is 1 / bbox diagonal."""

    center: tuple
    scale: float

    @property
    def translation(self) -> np.ndarray:
        """Offset of the affine map ``q = scale * p + translation``; zero for the identity."""
        return NOCS_CENTER - self.scale * np.asarray(self.center)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.center)) * self.scale + NOCS_CENTER

    def invert(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - NOCS_CENTER) / self.scale + np.asarray(self.center)

    def to_dict(self) -> dict:
        return {"center": [float(c) for c in self.center], "scale": float(self.scale)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationRecord":
        return cls(tuple(float(c) for c in d["center"]), float(d["scale"]))

    @classmethod
    def identity(cls) -> "NormalizationRecord":
        return cls((0.5, 0.5, 0.5), 1.0)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def normalize_mesh(mesh: Mesh) -> tuple[Mesh, NormalizationRecord]:
    if len(mesh.vertices) == 0 or len(mesh.triangles) == 0:
        raise NormalizationError("cannot normalize an empty mesh")
    lo, hi = mesh.bbox()
    diag = float(np.linalg.norm(hi - lo))
    if not diag > 0:
        raise NormalizationError("cannot normalize a mesh with zero bounding-box diagonal")
    record = NormalizationRecord(tuple(float(c) for c in (lo + hi) / 2.0), 1.0 / diag)
    # Rounding can push an extreme vertex an ulp outside the cube.
    return mesh.with_vertices(np.clip(record.apply(mesh.vertices), 0.0, 1.0)), record


def denormalize_points(cloud: PointCloud, record: NormalizationRecord) -> PointCloud:
    return PointCloud(record.invert(cloud.points), cloud.colors)
