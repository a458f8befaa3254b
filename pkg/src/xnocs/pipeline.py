"""Dataset generation and multiview evaluation sweeps.

A pipeline config is one JSON document::

    {
      "meshes": ["chair.obj", "car.ply"],
      "output_dir": "out",
      "views": 20,
      "width": 128, "height": 128,
      "radius_min": 1.2, "radius_max": 2.5,
      "seed": 0,
      "background_dir": null
    }

Each instance gets its own directory holding the normalized mesh, one set
of maps per view and a ``manifest.json`` describing them.
"""
from __future__ import annotations

import json
import logging
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import png

from . import io as xio
from .aggregate import readout, union
from .core import InputError, Mask, Mesh, NocsMap, PointCloud, XnocsError
from .metrics import chamfer
from .normalize import normalize_mesh
from .peeler import build_bvh, render_view, sample_cameras

log = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    "meshes": [],
    "output_dir": "xnocs_out",
    "views": 20,
    "width": 128,
    "height": 128,
    "radius_min": 1.2,
    "radius_max": 2.5,
    "seed": 0,
    "background_dir": None,
}


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("XNOCS_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


def load_config(path, overrides: Optional[dict] = None) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path} is not valid JSON: {exc}") from None
    base = Path(path).resolve().parent
    cfg["meshes"] = [str(p if Path(p).is_absolute() else base / p) for p in cfg.get("meshes", [])]
    if "output_dir" in cfg and not Path(cfg["output_dir"]).is_absolute():
        cfg["output_dir"] = str(base / cfg["output_dir"])
    return resolve_config(cfg, overrides)


def resolve_config(cfg: dict, overrides: Optional[dict] = None) -> dict:
    out = dict(DEFAULT_CONFIG)
    out.update(cfg)
    out.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if int(out["views"]) < 1:
        raise InputError("views must be at least 1")
    if not (0 < out["radius_min"] <= out["radius_max"]):
        raise InputError(f"invalid camera radius range [{out['radius_min']}, {out['radius_max']}]")
    return out


def instance_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


# -- RGB views --------------------------------------------------------------


def _load_backgrounds(directory) -> list[Path]:
    if not directory:
        return []
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise InputError(f"no PNG backgrounds found in {directory}")
    return paths


def _background(path: Path, width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    w, h, rows, _ = png.Reader(filename=str(path)).asRGB8()
    img = np.vstack([np.asarray(r, dtype=np.uint8) for r in rows]).reshape(h, w, 3)
    reps = (-(-height // h), -(-width // w), 1)
    img = np.tile(img, reps)
    y0 = rng.integers(0, img.shape[0] - height + 1)
    x0 = rng.integers(0, img.shape[1] - width + 1)
    return img[y0 : y0 + height, x0 : x0 + width].astype(np.float64) / 255.0


def composite_rgb(color: NocsMap, background: Optional[np.ndarray]) -> np.ndarray:
    """Alpha-over of the object colors onto a background (white when absent)."""
    bg = np.ones(color.shape + (3,)) if background is None else background
    alpha = color.valid[..., None].astype(np.float64)
    return alpha * color.coords + (1.0 - alpha) * bg


def _write_rgb(rgb: np.ndarray, path: Path) -> None:
    data = np.floor(np.clip(rgb, 0, 1) * 255 + 0.5).astype(np.uint8)
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        png.Writer(w, h, greyscale=False, bitdepth=8).write(fh, data.reshape(h, w * 3))


# -- dataset generation ------------------------------------------------------


def _render_one(mesh, bvh, camera, index, out_dir: Path, backgrounds, seed) -> dict:
    maps = render_view(mesh, camera, bvh=bvh)
    stem = f"view_{index:03d}"
    files = {}
    for key in ("visible", "occluded", "peeled_color"):
        if key in maps:
            files[key] = f"{stem}_{key}.png"
            xio.save_map(maps[key], out_dir / files[key])
    for key in ("visible", "occluded"):
        files[f"{key}_mask"] = f"{stem}_{key}_mask.png"
        xio.save_mask(Mask(maps[key].valid), out_dir / files[f"{key}_mask"])
    if "visible_color" in maps:
        rng = np.random.default_rng(instance_seed(seed, 10_000 + index))
        bg = None
        if backgrounds:
            bg = _background(backgrounds[rng.integers(len(backgrounds))], camera.width, camera.height, rng)
        files["rgb"] = f"{stem}_rgb.png"
        _write_rgb(composite_rgb(maps["visible_color"], bg), out_dir / files["rgb"])
    return {"index": index, "camera": camera.to_dict(), "maps": files}


def generate_instance(mesh: Mesh, name: str, out_dir, cfg: dict, seed: int, source: str = "") -> dict:
    """Normalize, render every view and write the instance manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "instance": name,
        "source_mesh": source,
        "complete": False,
        "seed": seed,
        "width": int(cfg["width"]),
        "height": int(cfg["height"]),
        "views": [],
    }
    try:
        nmesh, record = normalize_mesh(mesh)
        xio.save_mesh(nmesh, out_dir / "mesh.ply")
        manifest["normalized_mesh"] = "mesh.ply"
        manifest["normalization"] = record.to_dict()
        cams = sample_cameras(
            int(cfg["views"]), cfg["radius_min"], cfg["radius_max"], seed, int(cfg["width"]), int(cfg["height"])
        )
        bvh = build_bvh(nmesh)
        backgrounds = _load_backgrounds(cfg.get("background_dir"))
        with ThreadPoolExecutor(thread_count()) as pool:
            views = list(
                pool.map(
                    lambda ic: _render_one(nmesh, bvh, ic[1], ic[0], out_dir, backgrounds, seed),
                    enumerate(cams),
                )
            )
        manifest["views"] = views
        manifest["complete"] = True
    except XnocsError as exc:
        manifest["error"] = str(exc)
        xio.write_manifest(manifest, out_dir / "manifest.json")
        raise
    xio.write_manifest(manifest, out_dir / "manifest.json")
    return manifest


@dataclass
class PipelineResult:
    manifests: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 1 if self.errors else 0


def run_pipeline(cfg: dict) -> PipelineResult:
    """Generate ground-truth maps for every mesh in the config.

    Failures are collected per input file; the instance manifest of a
    failed instance is written with ``"complete": false``.
    """
    cfg = resolve_config(cfg)
    out_root = Path(cfg["output_dir"])
    result = PipelineResult()
    if not cfg["meshes"]:
        result.errors.append("config lists no meshes")
    names = set()
    for idx, mesh_path in enumerate(cfg["meshes"]):
        name = Path(mesh_path).stem
        if name in names:
            name = f"{name}_{idx}"
        names.add(name)
        try:
            mesh = xio.load_mesh(mesh_path)
            manifest = generate_instance(
                mesh, name, out_root / name, cfg, instance_seed(cfg["seed"], idx), source=str(mesh_path)
            )
            result.manifests.append(str(out_root / name / "manifest.json"))
            log.info("rendered %s (%d views)", name, len(manifest["views"]))
        except XnocsError as exc:
            log.error("%s: %s", mesh_path, exc)
            result.errors.append(f"{mesh_path}: {exc}")
    return result


# -- view sweep -------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.0
    dropout_p: float = 0.0


def corrupt_map(nmap: NocsMap, noise: NoiseModel, rng: np.random.Generator) -> NocsMap:
    """Gaussian coordinate noise (clamped to the cube) plus random pixel dropout."""
    coords = nmap.coords
    valid = nmap.valid
    if noise.sigma > 0:
        coords = np.clip(coords + rng.normal(scale=noise.sigma, size=coords.shape), 0.0, 1.0)
    if noise.dropout_p > 0:
        valid = valid & (rng.random(valid.shape) >= noise.dropout_p)
    return NocsMap(coords, valid, nmap.kind)


@dataclass
class SweepRow:
    k: int
    values: list  # Chamfer x100 per seed
    median: float


def view_sweep(
    view_maps: Sequence[Sequence[NocsMap]],
    reference: PointCloud,
    view_counts: Sequence[int],
    noise: NoiseModel = NoiseModel(),
    seeds: Sequence[int] = (0,),
    dedup_epsilon: Optional[float] = None,
) -> list[SweepRow]:
    """Chamfer x100 of k-view unions against a reference cloud.

    ``view_maps[i]`` holds the maps of view ``i`` (typically visible and
    occluded). For every seed the views are shuffled once and each view is
    corrupted once, so the k-view union is a subset of the (k+1)-view union.
    """
    n_views = len(view_maps)
    for k in view_counts:
        if k < 1:
            raise InputError(f"view count must be at least 1, got {k}")
        if k > n_views:
            raise InputError(f"view count {k} exceeds the {n_views} available views")
    per_k = {k: [] for k in view_counts}
    for seed in seeds:
        order = np.random.default_rng(instance_seed(seed, 0)).permutation(n_views)
        clouds = []
        for i in order[: max(view_counts)]:
            rng = np.random.default_rng(instance_seed(seed, int(i) + 1))
            clouds.append(union(readout(corrupt_map(m, noise, rng)) for m in view_maps[i]))
        for k in view_counts:
            merged = union(clouds[:k], dedup_epsilon)
            if len(merged) == 0:
                raise InputError(f"{k}-view union is empty for seed {seed}")
            per_k[k].append(chamfer(merged, reference).total_scaled)
    return [SweepRow(k, per_k[k], float(statistics.median(per_k[k]))) for k in view_counts]


def load_manifest_maps(manifest: dict, keys=("visible", "occluded")) -> list[list[NocsMap]]:
    if manifest.get("complete") is False:
        raise InputError(f"manifest for '{manifest.get('instance')}' is marked incomplete")
    return [[xio.load_view_map(manifest, view, key) for key in keys] for view in manifest["views"]]


def run_view_sweep(
    manifest: dict,
    reference: PointCloud,
    view_counts: Sequence[int],
    noise: NoiseModel = NoiseModel(),
    seeds: Sequence[int] = (0,),
    dedup_epsilon: Optional[float] = None,
) -> list[SweepRow]:
    return view_sweep(load_manifest_maps(manifest), reference, view_counts, noise, seeds, dedup_epsilon)
