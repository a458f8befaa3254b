"""File encodings: 16-bit RGBA PNG maps, PLY/OBJ geometry, JSON manifests."""
from __future__ import annotations

import io
import json
import os
from pathlib import Path
from typing import Optional, Union

import numpy as np
import png
from plyfile import PlyData, PlyElement, PlyParseError

from .core import Camera, DecodeError, InputError, MapKind, Mask, Mesh, MeshError, NocsMap, PointCloud

PathLike = Union[str, os.PathLike]

_MAX16 = 65535


def encode_map(nmap: NocsMap) -> bytes:
    """Encode a map as a 16-bit RGBA PNG.

    Channels hold ``round(c * 65535)``; alpha is 65535 for valid pixels and 0
    otherwise. Invalid pixels always write RGB = 0.
    """
    rgb = np.floor(nmap.coords * _MAX16 + 0.5).astype(np.uint16)
    alpha = np.where(nmap.valid, _MAX16, 0).astype(np.uint16)
    rgba = np.concatenate([rgb, alpha[..., None]], axis=2)
    rgba[~nmap.valid] = 0
    buf = io.BytesIO()
    writer = png.Writer(nmap.width, nmap.height, greyscale=False, alpha=True, bitdepth=16)
    writer.write(buf, rgba.reshape(nmap.height, nmap.width * 4))
    return buf.getvalue()


def decode_map(data: bytes, kind: MapKind = MapKind.VISIBLE) -> NocsMap:
    try:
        width, height, rows, info = png.Reader(bytes=data).read()
        if info["bitdepth"] != 16:
            raise DecodeError(f"unsupported bit depth {info['bitdepth']} (expected 16)")
        if info["planes"] != 4 or info["greyscale"] or not info["alpha"]:
            raise DecodeError(f"unsupported channel count {info['planes']} (expected 4, RGBA)")
        pixels = np.vstack([np.asarray(r, dtype=np.uint16) for r in rows]).reshape(height, width, 4)
    except png.Error as exc:
        raise DecodeError(f"malformed PNG stream: {exc}") from None
    valid = pixels[..., 3] > 0
    coords = pixels[..., :3].astype(np.float64) / _MAX16
    return NocsMap(coords, valid, kind)


def save_map(nmap: NocsMap, path: PathLike) -> None:
    Path(path).write_bytes(encode_map(nmap))


def load_map(path: PathLike, kind: MapKind = MapKind.VISIBLE) -> NocsMap:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read map {path}: {exc.strerror}") from None
    return decode_map(data, kind)


def save_mask(mask: Mask, path: PathLike) -> None:
    """Masks are stored as 1-bit greyscale PNGs."""
    with open(path, "wb") as fh:
        png.Writer(mask.width, mask.height, greyscale=True, bitdepth=1).write(fh, mask.bits.astype(np.uint8))


def load_mask(path: PathLike) -> Mask:
    try:
        width, height, rows, _ = png.Reader(filename=str(path)).asDirect()
        bits = np.vstack([np.asarray(r) for r in rows]).reshape(height, -1)
    except (png.Error, OSError) as exc:
        raise DecodeError(f"cannot read mask {path}: {exc}") from None
    return Mask(bits[:, :width] > 0)


def load_rgb(path: PathLike) -> np.ndarray:
    """Any PNG as an ``(H, W, 3)`` float image in [0, 1]."""
    try:
        width, height, rows, _ = png.Reader(filename=str(path)).asRGB8()
        img = np.vstack([np.asarray(r, dtype=np.uint8) for r in rows]).reshape(height, width, 3)
    except (png.Error, OSError) as exc:
        raise DecodeError(f"cannot read image {path}: {exc}") from None
    return img.astype(np.float64) / 255.0


# -- point clouds and meshes ------------------------------------------------


def write_ply(cloud: PointCloud, path: PathLike, binary: bool = True) -> None:
    """Write a point cloud; colors are stored as uchar RGB when present."""
    fields = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    if cloud.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    data = np.empty(len(cloud), dtype=fields)
    data["x"], data["y"], data["z"] = cloud.points.T
    if cloud.colors is not None:
        rgb = np.floor(cloud.colors * 255 + 0.5).astype(np.uint8)
        data["red"], data["green"], data["blue"] = rgb.T
    el = PlyElement.describe(data, "vertex")
    PlyData([el], text=not binary, byte_order="<").write(str(path))


def write_mesh_ply(mesh: Mesh, path: PathLike, binary: bool = True) -> None:
    fields = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    if mesh.has_colors:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    verts = np.empty(len(mesh.vertices), dtype=fields)
    verts["x"], verts["y"], verts["z"] = mesh.vertices.T
    if mesh.has_colors:
        rgb = np.floor(mesh.vertex_colors * 255 + 0.5).astype(np.uint8)
        verts["red"], verts["green"], verts["blue"] = rgb.T
    faces = np.empty(len(mesh.triangles), dtype=[("vertex_indices", "i4", (3,))])
    faces["vertex_indices"] = mesh.triangles
    elements = [PlyElement.describe(verts, "vertex"), PlyElement.describe(faces, "face")]
    PlyData(elements, text=not binary, byte_order="<").write(str(path))


def _read_ply(path: PathLike) -> PlyData:
    try:
        return PlyData.read(str(path))
    except (OSError, PlyParseError, ValueError) as exc:
        raise InputError(f"cannot read PLY {path}: {exc}") from None


def _vertex_arrays(ply: PlyData) -> tuple[np.ndarray, Optional[np.ndarray]]:
    if "vertex" not in ply:
        raise InputError("PLY file has no vertex element")
    v = ply["vertex"].data
    names = v.dtype.names
    pts = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    colors = None
    if {"red", "green", "blue"} <= set(names):
        rgb = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.float64)
        scale = 255.0 if v["red"].dtype.kind in "ui" else 1.0
        colors = rgb / scale
    return pts, colors


def read_ply(path: PathLike) -> PointCloud:
    pts, colors = _vertex_arrays(_read_ply(path))
    return PointCloud(pts, colors)


def _triangulate(polys) -> np.ndarray:
    tris = []
    for poly in polys:
        poly = list(poly)
        for i in range(1, len(poly) - 1):
            tris.append((poly[0], poly[i], poly[i + 1]))
    return np.asarray(tris, dtype=np.int64).reshape(-1, 3)


def read_mesh_ply(path: PathLike) -> Mesh:
    ply = _read_ply(path)
    pts, colors = _vertex_arrays(ply)
    tris = np.zeros((0, 3), dtype=np.int64)
    if "face" in ply:
        face = ply["face"].data
        key = "vertex_indices" if "vertex_indices" in face.dtype.names else "vertex_index"
        tris = _triangulate(face[key])
    return Mesh(pts, tris, colors).cleaned()


def read_obj(path: PathLike) -> Mesh:
    """Minimal OBJ reader: ``v`` (optionally with ``r g b``) and ``f`` records.

    Polygons are fan-triangulated; texture/normal indices are ignored.
    """
    verts, colors, polys = [], [], []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read OBJ {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
                if len(parts) >= 7:
                    colors.append([float(x) for x in parts[4:7]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                polys.append(idx)
        except ValueError:
            raise MeshError(f"{path}:{lineno}: cannot parse '{line.strip()}'") from None
    vcolors = np.asarray(colors) if colors and len(colors) == len(verts) else None
    return Mesh(np.asarray(verts).reshape(-1, 3), _triangulate(polys), vcolors).cleaned()


def write_obj(mesh: Mesh, path: PathLike) -> None:
    lines = []
    for i, v in enumerate(mesh.vertices):
        rec = "v %.17g %.17g %.17g" % tuple(v)
        if mesh.has_colors:
            rec += " %.9g %.9g %.9g" % tuple(mesh.vertex_colors[i])
        lines.append(rec)
    lines += ["f %d %d %d" % tuple(t + 1) for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path: PathLike) -> Mesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return read_obj(path)
    if suffix == ".ply":
        return read_mesh_ply(path)
    raise InputError(f"unsupported mesh format '{suffix}' (expected .obj or .ply)")


def save_mesh(mesh: Mesh, path: PathLike) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        write_obj(mesh, path)
    elif suffix == ".ply":
        write_mesh_ply(mesh, path)
    else:
        raise InputError(f"unsupported mesh format '{suffix}' (expected .obj or .ply)")


# -- manifests --------------------------------------------------------------

MAP_KEYS = ("visible", "occluded", "peeled_color", "visible_mask", "occluded_mask")


def write_manifest(manifest: dict, path: PathLike) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path: PathLike) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read manifest {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"manifest {path} is not valid JSON: {exc}") from None
    if not isinstance(manifest.get("views"), list):
        raise InputError(f"manifest {path} has no 'views' list")
    manifest["_root"] = str(Path(path).resolve().parent)
    return manifest


def manifest_path(manifest: dict, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else Path(manifest.get("_root", ".")) / p


def view_camera(view: dict) -> Camera:
    return Camera.from_dict(view["camera"])


def load_view_map(manifest: dict, view: dict, key: str) -> NocsMap:
    kind = {
        "visible": MapKind.VISIBLE,
        "occluded": MapKind.OCCLUDED,
        "peeled_color": MapKind.PEELED_COLOR,
    }[key]
    if key not in view.get("maps", {}):
        raise InputError(f"view {view.get('index')} has no '{key}' map")
    return load_map(manifest_path(manifest, view["maps"][key]), kind)
