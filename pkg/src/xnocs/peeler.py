"""Ray-casting depth peeler producing NOCS, X-NOCS and peeled-color maps.

Every pixel ray is intersected with every triangle it can reach (through a
BVH), the hits are sorted by ray parameter and near-coincident hits
(shared edges and vertices) are merged. The first hit gives the visible
NOCS map, the last hit the X-NOCS map, and the k-th hit the k-th peeled
layer. Back faces are never culled.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Camera, InputError, MapKind, Mesh, NocsMap

DEDUP_T = 1e-9
_BARY_EPS = 1e-12
_DET_EPS = 1e-15
LEAF_SIZE = 4


class PeelError(InputError):
    pass


# -- BVH --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Bvh:
    """Flattened binary BVH.

    Node ``i`` has box ``lo[i]``..``hi[i]``. Inner nodes have children
    ``left[i]``, ``right[i]``; leaves have ``left[i] == -1`` and own
    ``order[start[i] : start[i] + count[i]]``.
    """

    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.lo)

    def is_leaf(self, i: int) -> bool:
        return self.left[i] < 0

    def leaves(self) -> list[int]:
        return [i for i in range(self.n_nodes) if self.left[i] < 0]


def build_bvh(mesh: Mesh, leaf_size: int = LEAF_SIZE) -> Bvh:
    """Median split along the longest centroid axis, built iteratively."""
    tri = mesh.vertices[mesh.triangles]  # (T, 3, 3)
    tmin, tmax = tri.min(axis=1), tri.max(axis=1)
    cent = tri.mean(axis=1)
    order = np.arange(len(tri))
    lo, hi, left, right, start, count = [], [], [], [], [], []

    def new_node(s, e):
        idx = order[s:e]
        lo.append(tmin[idx].min(axis=0) if e > s else np.zeros(3))
        hi.append(tmax[idx].max(axis=0) if e > s else np.zeros(3))
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(e - s)
        return len(lo) - 1

    root = new_node(0, len(tri))
    stack = [(root, 0, len(tri))]
    while stack:
        node, s, e = stack.pop()
        if e - s <= leaf_size:
            continue
        c = cent[order[s:e]]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        # stable sort keeps the build deterministic for equal centroids
        order[s:e] = order[s:e][np.argsort(c[:, axis], kind="stable")]
        mid = (s + e) // 2
        l_node, r_node = new_node(s, mid), new_node(mid, e)
        left[node], right[node] = l_node, r_node
        count[node] = 0
        stack.append((r_node, mid, e))
        stack.append((l_node, s, mid))

    return Bvh(
        lo=np.asarray(lo, dtype=np.float64).reshape(-1, 3),
        hi=np.asarray(hi, dtype=np.float64).reshape(-1, 3),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        start=np.asarray(start, dtype=np.int64),
        count=np.asarray(count, dtype=np.int64),
        order=order,
    )


# -- intersection kernel ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class HitArrays:
    """All hits of a ray batch, sorted by (ray, t) and deduplicated."""

    n_rays: int
    ray: np.ndarray  # (H,) ray index
    t: np.ndarray  # (H,)
    tri: np.ndarray  # (H,) triangle index
    bary: np.ndarray  # (H, 3) weights of the triangle's three vertices
    point: np.ndarray  # (H, 3)

    def counts(self) -> np.ndarray:
        return np.bincount(self.ray, minlength=self.n_rays)

    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.counts())[:-1]])


def _moller_trumbore(o, d, v0, e1, e2):
    """Intersect rays ``o + t d`` (R,3) with triangles (R,3) pairwise.

    Returns ``(hit, t, u, v)``; the barycentric test is inclusive so a ray
    through a shared edge reports both triangles (merged later).
    """
    p = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, p)
    ok = np.abs(det) > _DET_EPS
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = o - v0
    u = np.einsum("ij,ij->i", s, p) * inv
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = ok & (u >= -_BARY_EPS) & (v >= -_BARY_EPS) & (u + v <= 1.0 + _BARY_EPS) & (t > 0.0)
    return hit, t, u, v


def _intersect_block(mesh, ray_idx, tri_idx, origins, dirs):
    """Test every ray in ``ray_idx`` against every triangle in ``tri_idx``."""
    rr = np.repeat(ray_idx, len(tri_idx))
    tt = np.tile(tri_idx, len(ray_idx))
    f = mesh.triangles[tt]
    v0 = mesh.vertices[f[:, 0]]
    e1 = mesh.vertices[f[:, 1]] - v0
    e2 = mesh.vertices[f[:, 2]] - v0
    hit, t, u, v = _moller_trumbore(origins[rr], dirs[rr], v0, e1, e2)
    return rr[hit], tt[hit], t[hit], u[hit], v[hit]


def _slab(origins, inv_dir, lo, hi):
    t0 = (lo - origins) * inv_dir
    t1 = (hi - origins) * inv_dir
    # nan arises from 0 * inf when a ray lies exactly on a slab plane
    tnear = np.nanmax(np.minimum(t0, t1), axis=1)
    tfar = np.nanmin(np.maximum(t0, t1), axis=1)
    return (tnear <= tfar * (1 + 1e-12) + 1e-12) & (tfar >= 0.0)


def _finish(mesh, n_rays, rays, tris, ts, us, vs) -> HitArrays:
    if rays:
        ray = np.concatenate(rays)
        tri = np.concatenate(tris)
        t = np.concatenate(ts)
        u = np.concatenate(us)
        v = np.concatenate(vs)
    else:
        ray = np.zeros(0, np.int64)
        tri = np.zeros(0, np.int64)
        t = u = v = np.zeros(0)
    key = np.lexsort((tri, t, ray))
    ray, tri, t, u, v = ray[key], tri[key], t[key], u[key], v[key]
    dup = np.zeros(len(ray), dtype=bool)
    if len(ray) > 1:
        dup[1:] = (ray[1:] == ray[:-1]) & (np.abs(t[1:] - t[:-1]) < DEDUP_T)
    keep = ~dup
    ray, tri, t, u, v = ray[keep], tri[keep], t[keep], u[keep], v[keep]
    u = np.clip(u, 0.0, 1.0)
    v = np.clip(v, 0.0, 1.0)
    s = u + v
    over = s > 1.0
    u = np.where(over, u / np.where(over, s, 1.0), u)
    v = np.where(over, v / np.where(over, s, 1.0), v)
    bary = np.stack([1.0 - u - v, u, v], axis=1)
    corners = mesh.vertices[mesh.triangles[tri]]  # (H, 3, 3)
    point = np.einsum("hk,hkj->hj", bary, corners)
    return HitArrays(n_rays, ray, t, tri, bary, point)


def intersect_rays(
    mesh: Mesh,
    origins: np.ndarray,
    dirs: np.ndarray,
    bvh: Optional[Bvh] = None,
    use_bvh: bool = True,
) -> HitArrays:
    """Find every ray/triangle intersection of a ray batch.

    ``origins`` broadcasts against ``dirs`` (``(R, 3)``). With
    ``use_bvh=False`` each ray is tested against all triangles.
    """
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(dirs)
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape)
    out = ([], [], [], [], [])
    if len(mesh.triangles) == 0 or n == 0:
        return _finish(mesh, n, *out)

    all_rays = np.arange(n)
    if not use_bvh:
        for res, acc in zip(_intersect_block(mesh, all_rays, np.arange(len(mesh)), origins, dirs), out):
            acc.append(res)
        return _finish(mesh, n, *out)

    if bvh is None:
        bvh = build_bvh(mesh)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_dir = 1.0 / dirs
    stack = [(0, all_rays)]
    while stack:
        node, rays = stack.pop()
        with np.errstate(invalid="ignore"):
            inside = _slab(origins[rays], inv_dir[rays], bvh.lo[node], bvh.hi[node])
        rays = rays[inside]
        if len(rays) == 0:
            continue
        if bvh.left[node] < 0:
            s = bvh.start[node]
            tri_idx = bvh.order[s : s + bvh.count[node]]
            for res, acc in zip(_intersect_block(mesh, rays, tri_idx, origins, dirs), out):
                acc.append(res)
        else:
            stack.append((bvh.right[node], rays))
            stack.append((bvh.left[node], rays))
    return _finish(mesh, n, *out)


def cast_hits(mesh: Mesh, camera: Camera, bvh: Optional[Bvh] = None, use_bvh: bool = True) -> HitArrays:
    origin, dirs = camera.pixel_rays()
    return intersect_rays(mesh, origin, dirs, bvh=bvh, use_bvh=use_bvh)


# -- public per-pixel API ---------------------------------------------------


@dataclass(frozen=True)
class Hit:
    t: float
    point: tuple
    triangle_index: int
    barycentric: tuple
    color: Optional[tuple] = None


@dataclass(frozen=True)
class RayHitList:
    pixel: tuple  # (u, v)
    hits: tuple  # of Hit, ascending t


def cast_all(mesh: Mesh, camera: Camera, bvh: Optional[Bvh] = None) -> list[RayHitList]:
    """Complete sorted hit lists, one per pixel in row-major order."""
    h = cast_hits(mesh, camera, bvh=bvh)
    colors = None
    if mesh.has_colors and len(h.tri):
        colors = np.einsum("hk,hkj->hj", h.bary, mesh.vertex_colors[mesh.triangles[h.tri]])
    counts, offsets = h.counts(), h.offsets()
    out = []
    for r in range(h.n_rays):
        hits = []
        for j in range(offsets[r], offsets[r] + counts[r]):
            hits.append(
                Hit(
                    t=float(h.t[j]),
                    point=tuple(h.point[j]),
                    triangle_index=int(h.tri[j]),
                    barycentric=tuple(h.bary[j]),
                    color=None if colors is None else tuple(colors[j]),
                )
            )
        out.append(RayHitList((r % camera.width, r // camera.width), tuple(hits)))
    return out


def _check_normalized(mesh: Mesh, tol: float = 1e-9) -> None:
    if len(mesh.vertices) and (mesh.vertices.min() < -tol or mesh.vertices.max() > 1 + tol):
        raise PeelError("mesh is not normalized: vertices lie outside the unit cube")


def _layer_map(h: HitArrays, camera: Camera, pick: np.ndarray, ok: np.ndarray, values, kind) -> NocsMap:
    coords = np.zeros((h.n_rays, 3))
    coords[ok] = values[pick[ok]]
    shape = (camera.height, camera.width)
    return NocsMap(coords.reshape(*shape, 3), ok.reshape(shape), kind)


def peel_hits(h: HitArrays, camera: Camera, layers: int) -> list[NocsMap]:
    if layers < 1:
        raise PeelError("layers must be a positive integer")
    counts, offsets = h.counts(), h.offsets()
    last = offsets + counts - 1
    if layers == 2:
        ok = counts >= 1
        return [
            _layer_map(h, camera, offsets, ok, h.point, MapKind.VISIBLE),
            _layer_map(h, camera, last, ok, h.point, MapKind.OCCLUDED),
        ]
    maps = []
    for j in range(layers):
        kind = MapKind.VISIBLE if j == 0 else MapKind.OCCLUDED
        maps.append(_layer_map(h, camera, offsets + j, counts > j, h.point, kind))
    return maps


def peel(mesh: Mesh, camera: Camera, layers: int = 2, bvh: Optional[Bvh] = None) -> list[NocsMap]:
    """Depth-peel a normalized mesh.

    ``layers=2`` returns ``[first_hit, last_hit]``: a pixel with a single
    intersection is valid in both. Any other ``layers=k`` returns the hits
    ``1..k`` front to back, where map ``j`` is valid iff the ray has at
    least ``j`` intersections.
    """
    _check_normalized(mesh)
    return peel_hits(cast_hits(mesh, camera, bvh=bvh), camera, layers)


def peel_color_hits(mesh: Mesh, h: HitArrays, camera: Camera, last: bool = True) -> NocsMap:
    """Interpolated vertex color at the last (or, with ``last=False``, first) hit."""
    if not mesh.has_colors:
        raise PeelError("peel_color requires a mesh with vertex colors")
    counts, offsets = h.counts(), h.offsets()
    colors = np.zeros((0, 3))
    if len(h.tri):
        colors = np.einsum("hk,hkj->hj", h.bary, mesh.vertex_colors[mesh.triangles[h.tri]])
    pick = offsets + counts - 1 if last else offsets
    return _layer_map(h, camera, pick, counts >= 1, colors, MapKind.PEELED_COLOR)


def peel_color(mesh: Mesh, camera: Camera, bvh: Optional[Bvh] = None) -> NocsMap:
    """Vertex color interpolated at the last intersection of each pixel ray."""
    _check_normalized(mesh)
    if not mesh.has_colors:
        raise PeelError("peel_color requires a mesh with vertex colors")
    return peel_color_hits(mesh, cast_hits(mesh, camera, bvh=bvh), camera)


def render_view(mesh: Mesh, camera: Camera, bvh: Optional[Bvh] = None) -> dict:
    """Visible, occluded and (if colored) peeled-color maps from one ray cast."""
    _check_normalized(mesh)
    h = cast_hits(mesh, camera, bvh=bvh)
    visible, occluded = peel_hits(h, camera, 2)
    out = {"visible": visible, "occluded": occluded}
    if mesh.has_colors:
        out["peeled_color"] = peel_color_hits(mesh, h, camera)
        out["visible_color"] = peel_color_hits(mesh, h, camera, last=False)
    return out


def sample_cameras(
    count: int,
    radius_min: float = 1.2,
    radius_max: float = 2.5,
    seed: int = 0,
    width: int = 64,
    height: int = 64,
) -> list[Camera]:
    """Cameras on a spherical shell around the NOCS center, all looking inward.

    Directions are uniform on the sphere and radii uniform in
    ``[radius_min, radius_max]``.
    """
    if not (0 < radius_min <= radius_max):
        raise InputError(f"invalid radius range [{radius_min}, {radius_max}]")
    if count < 0:
        raise InputError("camera count must be non-negative")
    rng = np.random.default_rng(seed)
    target = np.array([0.5, 0.5, 0.5])
    cams = []
    for _ in range(count):
        d = rng.normal(size=3)
        while np.linalg.norm(d) < 1e-12:
            d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        r = rng.uniform(radius_min, radius_max)
        cams.append(Camera.look_at(target + r * d, target, width, height))
    return cams
