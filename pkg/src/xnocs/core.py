"""Shared domain types for NOCS maps, meshes, cameras and point clouds.

Conventions used everywhere in the package:

* Image pixel ``(u, v)``: ``u`` grows rightward, ``v`` downward, and the
  origin sits at the *center* of the top-left pixel. Grids are stored as
  ``(height, width, ...)`` arrays, so pixel ``(u, v)`` is ``grid[v, u]``.
* Cameras follow the pinhole model ``x_cam = R @ X + t`` with the optical
  axis along ``+z`` in camera space (``+x`` right, ``+y`` down).
* Invalid map pixels store the coordinate ``(0, 0, 0)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class XnocsError(Exception):
    """Base class for all package errors."""


class InputError(XnocsError):
    """Malformed or missing input (CLI exit code 1)."""


class NumericalError(XnocsError):
    """A computation could not produce a meaningful answer (CLI exit code 2)."""


class DecodeError(InputError):
    pass


class MeshError(InputError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class MapKind(str, enum.Enum):
    VISIBLE = "visible"
    OCCLUDED = "occluded"
    PEELED_COLOR = "peeled_color"


@dataclass(frozen=True, eq=False)
class Mask:
    bits: np.ndarray  # (H, W) bool

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2 or 0 in bits.shape:
            raise InputError(f"mask must be a non-empty 2D grid, got shape {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True, eq=False)
class NocsMap:
    """Per-pixel NOCS coordinates with a validity mask.

    ``coords`` is ``(H, W, 3)`` float64 and ``valid`` is ``(H, W)`` bool.
    Coordinates are clipped to ``[0, 1]`` and zeroed where invalid, so the
    canonical form is enforced at construction.
    """

    coords: np.ndarray
    valid: np.ndarray
    kind: MapKind = MapKind.VISIBLE

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if coords.ndim != 3 or coords.shape[2] != 3:
            raise InputError(f"coords must have shape (H, W, 3), got {coords.shape}")
        if valid.shape != coords.shape[:2]:
            raise InputError(f"valid mask shape {valid.shape} does not match coords {coords.shape[:2]}")
        if 0 in valid.shape:
            raise InputError("map must have positive width and height")
        if not np.all(np.isfinite(coords[valid])):
            raise InputError("map contains non-finite coordinates")
        coords = np.where(valid[..., None], np.clip(coords, 0.0, 1.0), 0.0)
        object.__setattr__(self, "coords", _frozen(coords))
        object.__setattr__(self, "valid", _frozen(valid))
        object.__setattr__(self, "kind", MapKind(self.kind))

    @classmethod
    def empty(cls, width: int, height: int, kind: MapKind = MapKind.VISIBLE) -> "NocsMap":
        return cls(np.zeros((height, width, 3)), np.zeros((height, width), bool), kind)

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def valid_count(self) -> int:
        return int(self.valid.sum())

    def with_kind(self, kind: MapKind) -> "NocsMap":
        return NocsMap(self.coords, self.valid, kind)


def mask_of(nmap: NocsMap) -> Mask:
    return Mask(nmap.valid)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Indexed triangle mesh with optional per-vertex RGB colors in [0, 1]."""

    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64
    vertex_colors: Optional[np.ndarray] = None  # (V, 3) float64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise MeshError("mesh has non-finite vertices")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError(f"triangle index out of range for {len(v)} vertices")
        colors = self.vertex_colors
        if colors is not None:
            colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
            if len(colors) != len(v):
                raise MeshError("vertex_colors must be parallel to vertices")
            colors = _frozen(np.clip(colors, 0.0, 1.0))
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "triangles", _frozen(f))
        object.__setattr__(self, "vertex_colors", colors)

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def has_colors(self) -> bool:
        return self.vertex_colors is not None

    def triangle_areas(self) -> np.ndarray:
        tri = self.vertices[self.triangles]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def cleaned(self, min_area: float = 1e-12) -> "Mesh":
        """Drop triangles with area at or below ``min_area``."""
        keep = self.triangle_areas() > min_area
        if keep.all():
            return self
        return Mesh(self.vertices, self.triangles[keep], self.vertex_colors)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            raise MeshError("empty mesh has no bounding box")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        return Mesh(vertices, self.triangles, self.vertex_colors)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (N, 3)
    colors: Optional[np.ndarray] = None  # (N, 3)

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        c = self.colors
        if c is not None:
            c = np.asarray(c, dtype=np.float64).reshape(-1, 3)
            if len(c) != len(p):
                raise InputError(f"colors ({len(c)}) must match points ({len(p)})")
            c = _frozen(c)
        object.__setattr__(self, "points", _frozen(p))
        object.__setattr__(self, "colors", c)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))

    def subset(self, index) -> "PointCloud":
        colors = None if self.colors is None else self.colors[index]
        return PointCloud(self.points[index], colors)


def _is_rotation(r: np.ndarray, tol: float = 1e-9) -> bool:
    return (
        r.shape == (3, 3)
        and np.allclose(r @ r.T, np.eye(3), atol=tol, rtol=0)
        and abs(np.linalg.det(r) - 1.0) <= tol
    )


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    width: int = 64
    height: int = 64

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise InputError("focal lengths must be positive")
        if not _is_rotation(r):
            raise InputError("camera rotation must be orthonormal with determinant +1")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise InputError("image size must be positive")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def default_intrinsics(cls, width: int, height: int, rotation=None, translation=None) -> "Camera":
        """Camera with ``f = 1.2 * max(width, height)`` and a centered principal point."""
        f = 1.2 * max(width, height)
        return cls(
            fx=f,
            fy=f,
            cx=(width - 1) / 2.0,
            cy=(height - 1) / 2.0,
            rotation=np.eye(3) if rotation is None else rotation,
            translation=np.zeros(3) if translation is None else translation,
            width=width,
            height=height,
        )

    @classmethod
    def look_at(cls, center, target, width: int, height: int, up=(0.0, 1.0, 0.0), **intrinsics) -> "Camera":
        """Place a camera at ``center`` looking at ``target``.

        Falls back to ``+x`` as the up vector when the view direction is
        parallel to ``up``.
        """
        center = np.asarray(center, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - center
        norm = np.linalg.norm(forward)
        if norm == 0:
            raise InputError("camera center coincides with look-at target")
        forward /= norm
        up = np.asarray(up, dtype=np.float64)
        right = np.cross(forward, up)
        if np.linalg.norm(right) < 1e-6:
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        f = 1.2 * max(width, height)
        params = dict(fx=f, fy=f, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0)
        params.update(intrinsics)
        return cls(rotation=rot, translation=-rot @ center, width=width, height=height, **params)

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def projection(self) -> np.ndarray:
        return self.intrinsics @ np.hstack([self.rotation, self.translation[:, None]])

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def project(self, points: np.ndarray) -> np.ndarray:
        """Project world points ``(N, 3)`` to pixel coordinates ``(N, 2)``."""
        cam = np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation
        return np.stack(
            [self.fx * cam[:, 0] / cam[:, 2] + self.cx, self.fy * cam[:, 1] / cam[:, 2] + self.cy],
            axis=1,
        )

    def pixel_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """World-space unit ray directions for every pixel, row-major.

        Returns ``(origin, directions)`` with ``directions`` of shape
        ``(H * W, 3)``.
        """
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        d_cam = np.stack(
            [(u.ravel() - self.cx) / self.fx, (v.ravel() - self.cy) / self.fy, np.ones(u.size)], axis=1
        )
        d = d_cam @ self.rotation  # R^T applied row-wise
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return self.center, d

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "rotation": [float(x) for x in self.rotation.ravel()],
            "translation": [float(x) for x in self.translation],
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        try:
            return cls(
                fx=d["fx"],
                fy=d["fy"],
                cx=d["cx"],
                cy=d["cy"],
                rotation=np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
                translation=np.asarray(d["translation"], dtype=np.float64),
                width=d["width"],
                height=d["height"],
            )
        except KeyError as exc:
            raise InputError(f"camera record is missing field {exc}") from None
