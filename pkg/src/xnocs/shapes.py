"""Procedural test meshes (boxes, spheres, tori, a simple chair)."""
from __future__ import annotations

import numpy as np

from .core import Mesh


def _vertex_colors(color, verts: np.ndarray):
    """``None``, one RGB triple for every vertex, or ``"position"`` (the vertex coordinate, clipped to [0, 1])."""
    if color is None:
        return None
    if isinstance(color, str):
        if color != "position":
            raise ValueError(f"unknown color mode '{color}'")
        return np.clip(verts, 0.0, 1.0)
    return np.tile(np.asarray(color, float), (len(verts), 1))


def box(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0), color=None) -> Mesh:
    """Closed axis-aligned box, 12 outward-facing triangles."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    verts = lo + corners * (hi - lo)
    # vertex index = 4x + 2y + z
    quads = [
        (0, 1, 3, 2),  # x = lo
        (4, 6, 7, 5),  # x = hi
        (0, 4, 5, 1),  # y = lo
        (2, 3, 7, 6),  # y = hi
        (0, 2, 6, 4),  # z = lo
        (1, 5, 7, 3),  # z = hi
    ]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return Mesh(verts, np.asarray(tris), _vertex_colors(color, verts))


def icosphere(center=(0.5, 0.5, 0.5), radius=0.5, subdivisions=2, color=None) -> Mesh:
    t = (1.0 + 5**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.asarray(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    verts = np.asarray(center, float) + radius * np.asarray(verts)
    return Mesh(verts, np.asarray(faces), _vertex_colors(color, verts))


def torus(center=(0.5, 0.5, 0.5), major=0.3, minor=0.1, n_major=32, n_minor=16, color=None) -> Mesh:
    """Closed torus around the z axis."""
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    theta = 2 * np.pi * i / n_major
    phi = 2 * np.pi * j / n_minor
    r = major + minor * np.cos(phi)
    verts = np.stack([r * np.cos(theta), r * np.sin(theta), minor * np.sin(phi)], axis=-1).reshape(-1, 3)
    idx = lambda a, b: (a % n_major) * n_minor + (b % n_minor)  # noqa: E731
    tris = []
    for a in range(n_major):
        for b in range(n_minor):
            p, q, r_, s = idx(a, b), idx(a + 1, b), idx(a + 1, b + 1), idx(a, b + 1)
            tris += [(p, q, r_), (p, r_, s)]
    verts = np.asarray(center, float) + verts
    return Mesh(verts, np.asarray(tris), _vertex_colors(color, verts))


def merge(*meshes: Mesh) -> Mesh:
    verts, tris, colors, offset = [], [], [], 0
    with_colors = all(m.has_colors for m in meshes)
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        if with_colors:
            colors.append(m.vertex_colors)
        offset += len(m.vertices)
    return Mesh(np.vstack(verts), np.vstack(tris), np.vstack(colors) if with_colors else None)


def chair(color=None) -> Mesh:
    """Seat, backrest and four legs built from boxes; thin parts exercise the occluded map."""
    parts = [
        box((0.2, 0.40, 0.2), (0.8, 0.46, 0.8), color),  # seat
        box((0.2, 0.46, 0.74), (0.8, 0.95, 0.8), color),  # back
    ]
    for x in (0.2, 0.74):
        for z in (0.2, 0.74):
            parts.append(box((x, 0.05, z), (x + 0.06, 0.40, z + 0.06), color))
    return merge(*parts)
