"""Command-line entry points: ingest, transform, render, clusters, serve."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .cluster import (DEFAULT_EPS, DEFAULT_MIN_PTS, detect_clusters,
                      summarize_cluster)
from .frame import RenderContext, render_frame, save_png
from .ingest import load_dataset
from .model import (Camera, GridSpec, SelectionState, read_dataset,
                    read_volume, write_dataset, write_volume)
from .pipeline import build_volume
from .transfer import RenderSettings, TransferFunction


def _grid_arg(text: str):
    try:
        m, n = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid {text!r} is not <m>x<n>")
    return m, n


def _size_arg(text: str):
    try:
        w, h = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size {text!r} is not <W>x<H>")
    return w, h


def _floats_arg(text: str, count: int, label: str):
    parts = text.split(",")
    if len(parts) != count:
        raise argparse.ArgumentTypeError(
            f"{label} {text!r} needs {count} comma-separated numbers")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{label} {text!r} is not numeric")


def _extent_arg(text: str):
    return _floats_arg(text, 4, "extent")


def _spot_arg(text: str):
    return _floats_arg(text, 3, "spot")


def _trange_arg(text: str):
    try:
        lo, hi = (int(p) for p in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"trange {text!r} is not <t0>:<t1>")
    return lo, hi


def _camera_arg(text: str):
    """eye/target/up/vfov, each vector comma-separated: 'x,y,z/x,y,z/x,y,z/40'."""
    parts = text.split("/")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(
            f"camera {text!r} is not eye/target/up/vfov")
    eye = _floats_arg(parts[0], 3, "camera eye")
    target = _floats_arg(parts[1], 3, "camera target")
    up = _floats_arg(parts[2], 3, "camera up")
    try:
        vfov = float(parts[3])
    except ValueError:
        raise argparse.ArgumentTypeError(f"camera vfov {parts[3]!r} is not a number")
    return eye, target, up, vfov


def _load_map(path):
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volstc",
        description="Space-time volume tools: build, render, analyze, serve.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest",
                       help="align station readings into a dataset file")
    p.add_argument("--stations", required=True)
    p.add_argument("--readings", required=True)
    p.add_argument("--t0", required=True,
                   help="epoch seconds or ISO-8601 time of step 0")
    p.add_argument("--dt", required=True, type=int, help="seconds per step")
    p.add_argument("--steps", required=True, type=int, help="number of steps")
    p.add_argument("--vmin", required=True, type=float)
    p.add_argument("--vmax", required=True, type=float)
    p.add_argument("--out", required=True, help="output .vsd path")

    p = sub.add_parser("transform",
                       help="interpolate a dataset onto a grid volume")
    p.add_argument("--in", dest="input", required=True, help=".vsd path")
    p.add_argument("--grid", required=True, type=_grid_arg,
                   metavar="<m>x<n>")
    p.add_argument("--extent", required=True, type=_extent_arg,
                   metavar="lon0,lat0,lon1,lat1")
    p.add_argument("--method", choices=("kriging", "idw"), default="kriging")
    p.add_argument("--window", type=int, default=24,
                   help="temporal smoothing window (steps)")
    p.add_argument("--out", required=True, help="output .vstc path")

    p = sub.add_parser("render", help="render one frame of a volume")
    p.add_argument("--volume", required=True, help=".vstc path")
    p.add_argument("--camera", type=_camera_arg,
                   metavar="eye/target/up/vfov",
                   help="default: framing view from the south")
    p.add_argument("--size", type=_size_arg, default=(512, 512),
                   metavar="<W>x<H>")
    p.add_argument("--lambda-v", type=float, default=0.0)
    p.add_argument("--surface", action="store_true",
                   help="opaque isosurface mode")
    p.add_argument("--lambda-i", type=float,
                   help="isosurface level (default: midrange)")
    p.add_argument("--trange", type=_trange_arg, metavar="<t0>:<t1>",
                   help="clip to an inclusive step range")
    p.add_argument("--spot", type=_spot_arg, metavar="cx,cy,r",
                   help="spotlight cylinder in cell coordinates")
    p.add_argument("--map", dest="map_path", help="base map image")
    p.add_argument("--out", required=True, help="output .png path")

    p = sub.add_parser("clusters",
                       help="detect high-value voxel clusters")
    p.add_argument("--volume", required=True, help=".vstc path")
    p.add_argument("--lambda-a", required=True, type=float)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--min-pts", type=int, default=DEFAULT_MIN_PTS)
    p.add_argument("--out", required=True, help="output .json path")

    p = sub.add_parser("serve", help="run the interactive session service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--map", dest="map_path", help="base map image")

    return parser


def _cmd_ingest(args) -> int:
    warnings: list = []
    dataset = load_dataset(args.stations, args.readings, args.t0, args.dt,
                           args.steps, (args.vmin, args.vmax),
                           warnings_out=warnings)
    write_dataset(args.out, dataset)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {args.out}: {len(dataset.stations)} stations x "
          f"{dataset.T} steps")
    return 0


def _cmd_transform(args) -> int:
    dataset = read_dataset(args.input)
    m, n = args.grid
    grid = GridSpec(extent=args.extent, m=m, n=n)
    volume = build_volume(dataset, grid, method=args.method,
                          window=args.window)
    write_volume(args.out, volume)
    print(f"wrote {args.out}: {volume.T} x {volume.n} x {volume.m} "
          f"({args.method}, window {args.window})")
    return 0


def _cmd_render(args) -> int:
    from .service import default_camera

    volume = read_volume(args.volume)
    w, h = args.size
    if args.camera is not None:
        eye, target, up, vfov = args.camera
        camera = Camera(eye=eye, target=target, up=up, vfov=vfov,
                        width=w, height=h)
    else:
        camera = default_camera(volume)
        camera.width, camera.height = w, h
    camera.validate()

    settings = RenderSettings(
        tf=TransferFunction.for_range(volume.value_range),
        lambda_v=args.lambda_v,
        surface_enabled=args.surface,
        lambda_i=args.lambda_i,
    )
    if args.trange is not None:
        lo, hi = args.trange
        lo = min(max(lo, 0), volume.T - 1)
        hi = min(max(hi, 0), volume.T - 1)
        if lo > hi:
            lo, hi = hi, lo
        time_range = (lo, hi)
    else:
        time_range = (0, volume.T - 1)
    selection = SelectionState(time_range=time_range, spotlight=args.spot)
    selection.validate(volume.T)

    context = RenderContext(
        map_image=_load_map(args.map_path) if args.map_path else None)
    image, meta = render_frame(volume, camera, settings, selection, context)
    save_png(image, args.out)
    print(f"wrote {args.out}: {meta.width}x{meta.height}")
    return 0


def _cmd_clusters(args) -> int:
    volume = read_volume(args.volume)
    clusters = detect_clusters(volume, args.lambda_a, eps=args.eps,
                               min_pts=args.min_pts)
    summaries = [summarize_cluster(c).to_dict() for c in clusters]
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(summaries, fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.out}: {len(summaries)} cluster(s)")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        map_image=_load_map(args.map_path) if args.map_path else None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "transform": _cmd_transform,
    "render": _cmd_render,
    "clusters": _cmd_clusters,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
