"""Command-line entry point: ``xnocs <subcommand> ...``.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as xio
from .aggregate import readout, union
from .core import InputError, NumericalError, XnocsError
from .metrics import chamfer, sample_surface
from .normalize import normalize_mesh
from .pipeline import NoiseModel, load_config, resolve_config, run_pipeline, run_view_sweep
from .pose import correspondences_from_map, dlt_pose
from .postproc import (
    DEFAULT_K,
    DEFAULT_RADIUS,
    DEFAULT_SIGMA_RANGE,
    DEFAULT_SIGMA_SPATIAL,
    DEFAULT_STDDEV_MULT,
    bilateral_filter,
    statistical_outlier_removal,
)
from .verify import equi_check

log = logging.getLogger("xnocs")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got '{text}'") from None


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2))


def cmd_normalize(args) -> int:
    mesh, record = normalize_mesh(xio.load_mesh(args.input))
    xio.save_mesh(mesh, args.output)
    if args.record:
        Path(args.record).write_text(record.dumps() + "\n")
    return 0


def cmd_render(args) -> int:
    width, height = args.size
    cfg = resolve_config(
        {
            "meshes": [args.mesh],
            "output_dir": args.out,
            "views": args.views,
            "seed": args.seed,
            "width": width,
            "height": height,
            "radius_min": args.radius_min,
            "radius_max": args.radius_max,
            "background_dir": args.background_dir,
        }
    )
    result = run_pipeline(cfg)
    for err in result.errors:
        print(f"error: {err}", file=sys.stderr)
    for m in result.manifests:
        print(m)
    return result.exit_code


def cmd_pipeline(args) -> int:
    overrides = {"views": args.views, "seed": args.seed, "output_dir": args.out}
    if args.size:
        overrides["width"], overrides["height"] = args.size
    result = run_pipeline(load_config(args.config, overrides))
    for err in result.errors:
        print(f"error: {err}", file=sys.stderr)
    for m in result.manifests:
        print(m)
    return result.exit_code


def cmd_aggregate(args) -> int:
    manifest = xio.read_manifest(args.manifest)
    views = manifest["views"]
    indices = args.views if args.views is not None else [v["index"] for v in views]
    by_index = {v["index"]: v for v in views}
    keys = ["visible"] if args.visible_only else ["visible", "occluded"]
    clouds = []
    for i in indices:
        if i not in by_index:
            raise InputError(f"manifest has no view {i}")
        view = by_index[i]
        for key in keys:
            nmap = xio.load_view_map(manifest, view, key)
            color = None
            if args.color and key == "occluded" and "peeled_color" in view["maps"]:
                color = xio.load_view_map(manifest, view, "peeled_color")
            elif args.color and key == "visible" and "rgb" in view["maps"]:
                color = xio.load_rgb(xio.manifest_path(manifest, view["maps"]["rgb"]))
            clouds.append(readout(nmap, color))
    if args.color and not all(c.colors is not None for c in clouds):
        log.warning("not every view has color data; writing an uncolored cloud")
    cloud = union(clouds, args.dedup)
    xio.write_ply(cloud, args.out, binary=not args.ascii)
    print(f"{len(cloud)} points -> {args.out}")
    return 0


def cmd_chamfer(args) -> int:
    res = chamfer(xio.read_ply(args.a), xio.read_ply(args.b))
    _print_json(res.to_dict())
    return 0


def cmd_pose(args) -> int:
    nmap = xio.load_map(args.map)
    est = dlt_pose(correspondences_from_map(nmap, args.stride))
    _print_json(est.to_dict())
    return 0


def cmd_filter(args) -> int:
    path = Path(args.input)
    if path.suffix.lower() == ".png":
        nmap = xio.load_map(path)
        out = bilateral_filter(nmap, args.sigma_s, args.sigma_r, args.radius)
        xio.save_map(out, args.out)
        print(f"filtered {nmap.valid_count()} pixels -> {args.out}")
    elif path.suffix.lower() == ".ply":
        cloud = xio.read_ply(path)
        out = statistical_outlier_removal(cloud, args.k, args.mult)
        xio.write_ply(out, args.out)
        print(f"kept {len(out)} of {len(cloud)} points -> {args.out}")
    else:
        raise InputError(f"cannot filter '{path.suffix}' files (expected .png or .ply)")
    return 0


def cmd_equi_check(args) -> int:
    report = equi_check(args.n, args.dim, args.seed)
    _print_json(report)
    return 0


def cmd_sweep(args) -> int:
    manifest = xio.read_manifest(args.manifest)
    if args.reference:
        reference = xio.read_ply(args.reference)
    else:
        mesh_rel = manifest.get("normalized_mesh")
        if not mesh_rel:
            raise InputError("manifest has no normalized mesh; pass --reference")
        mesh = xio.load_mesh(xio.manifest_path(manifest, mesh_rel))
        reference = sample_surface(mesh, args.reference_samples, seed=args.seed)
    rows = run_view_sweep(
        manifest,
        reference,
        args.views,
        NoiseModel(args.sigma, args.dropout),
        seeds=list(range(args.seed, args.seed + args.seeds)),
        dedup_epsilon=args.dedup,
    )
    _print_json([{"k": r.k, "median_chamfer_x100": r.median, "values": r.values} for r in rows])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xnocs", description="X-NOCS map generation, aggregation and evaluation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("normalize", help="scale a mesh into the unit NOCS cube")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--record", help="write the normalization record as JSON")
    s.set_defaults(func=cmd_normalize)

    s = sub.add_parser("render", help="render ground-truth maps for one mesh")
    s.add_argument("mesh")
    s.add_argument("--views", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=_size, default=(128, 128), help="WxH")
    s.add_argument("--out", required=True)
    s.add_argument("--radius-min", type=float, default=1.2)
    s.add_argument("--radius-max", type=float, default=2.5)
    s.add_argument("--background-dir", help="directory of PNG backgrounds for RGB views")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("pipeline", help="render every mesh listed in a JSON config")
    s.add_argument("config")
    s.add_argument("--views", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--size", type=_size)
    s.add_argument("--out")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("aggregate", help="union the readouts of several views")
    s.add_argument("manifest")
    s.add_argument("--views", type=_int_list, help="comma-separated view indices (default: all)")
    s.add_argument("--dedup", type=float, help="voxel size for optional thinning")
    s.add_argument("--visible-only", action="store_true")
    s.add_argument("--color", action="store_true", help="color occluded points with the peeled color map")
    s.add_argument("--ascii", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_aggregate)

    s = sub.add_parser("chamfer", help="two-way Chamfer distance between PLY clouds")
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(func=cmd_chamfer)

    s = sub.add_parser("pose", help="estimate camera pose from a NOCS map")
    s.add_argument("map")
    s.add_argument("--stride", type=int, default=1)
    s.set_defaults(func=cmd_pose)

    s = sub.add_parser("filter", help="bilateral-filter a map (.png) or clean a cloud (.ply)")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--sigma-s", type=float, default=DEFAULT_SIGMA_SPATIAL)
    s.add_argument("--sigma-r", type=float, default=DEFAULT_SIGMA_RANGE)
    s.add_argument("--radius", type=int, default=DEFAULT_RADIUS)
    s.add_argument("--k", type=int, default=DEFAULT_K)
    s.add_argument("--mult", type=float, default=DEFAULT_STDDEV_MULT)
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("equi-check", help="equivariance and gradient self-checks")
    s.add_argument("--n", type=int, default=5)
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_equi_check)

    s = sub.add_parser("sweep", help="Chamfer vs. number of aggregated views")
    s.add_argument("manifest")
    s.add_argument("--views", type=_int_list, default=[1, 2, 3, 5])
    s.add_argument("--reference", help="reference PLY (default: sample the normalized mesh)")
    s.add_argument("--reference-samples", type=int, default=100_000)
    s.add_argument("--sigma", type=float, default=0.0)
    s.add_argument("--dropout", type=float, default=0.0)
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dedup", type=float)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except (InputError, XnocsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except np.linalg.LinAlgError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
