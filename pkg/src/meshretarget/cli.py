"""Command-line interface: retarget, evaluate, bench, gradcheck.

Exit codes: 0 success, 2 bad arguments or config, 3 I/O, 4 optimizer
failure, 5 fold-over that survived the restart, 1 failed gradient check.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from PIL import UnidentifiedImageError

from . import io
from .errors import FoldOverError, NumericalError, OptimizationError, RetargetError, UnsupportedOperationError
from .geometry import build_rigid_mesh, check_foldover
from .metric import baseline_cr, baseline_scl, distortion_error, measure_result

logger = logging.getLogger("meshretarget")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_OPTIMIZER = 4
EXIT_FOLDOVER = 5

STANDARD_SCALES = (0.5, 0.75, 1.25, 1.5, 1.75)
METHODS = ("objectir", "scl", "cr")
MISSING = "--"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class UsageError(Exception):
    pass


def _csv_floats(text, what):
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if not values or any(not (v > 0 and math.isfinite(v)) for v in values):
        raise UsageError(f"{what}: values must be positive")
    return values


def _load_config(args):
    config = io.load_config(args.config) if getattr(args, "config", None) else io.JobConfig()
    if getattr(args, "enlarge_mode", None):
        config = replace(config, enlarge_mode=args.enlarge_mode)
    return config


def _emit(args, payload, text):
    if args.json:
        sys.stdout.write(io.dump_json(payload))
    else:
        print(text)


def _target_size(args, w, h):
    if args.scale is not None:
        if not args.scale > 0:
            raise UsageError("--scale must be positive")
        return max(1, round(args.scale * w)), h
    out_w = args.width if args.width is not None else w
    out_h = args.height if args.height is not None else h
    if out_w <= 0 or out_h <= 0:
        raise UsageError("target size must be positive")
    return out_w, out_h


def cmd_retarget(args) -> int:
    from .plots import plot_loss_trace
    from .viz import compose_panel, draw_boxes, draw_mesh_overlay
    from .warp import retarget

    if args.scale is None and args.width is None and args.height is None:
        raise UsageError("one of --scale, --width, --height is required")
    if args.scale is not None and (args.width is not None or args.height is not None):
        raise UsageError("--scale cannot be combined with --width/--height")
    config = _load_config(args)
    img = io.load_image(args.input)
    h, w = img.shape[:2]
    boxes = io.load_boxes(args.boxes, (w, h))
    out_w, out_h = _target_size(args, w, h)
    if (out_w > w or out_h > h) and (out_w < w or out_h < h):
        raise UsageError("mixed enlargement and reduction is not supported")
    result = retarget(img, boxes, out_w, out_h, config)
    if result.foldover:
        raise FoldOverError(check_foldover(result.mesh))

    io.save_image(result.image, args.out)
    if args.dump_mesh:
        io.save_mesh(result.mesh, args.dump_mesh)
    if args.loss_trace:
        with open(args.loss_trace, "w") as fh:
            for entry in result.trace:
                fh.write(json.dumps(entry) + "\n")
    report = measure_result(result.mesh_src, result.mesh_dst, boxes, (out_w, out_h), config.box_mode) if boxes else None
    if args.viz:
        viz = Path(args.viz)
        viz.mkdir(parents=True, exist_ok=True)
        if result.mode == "enlarge":
            mesh_panel = draw_mesh_overlay(img, result.mesh_src)
        else:
            mesh_panel = draw_mesh_overlay(result.image, result.mesh_dst)
        from .geometry import map_box
        from .metric import clip_or_vanish

        mapped = [clip_or_vanish(map_box(result.mesh_src, result.mesh_dst, b, config.box_mode), out_w, out_h)
                  for b in boxes]
        io.save_image(draw_boxes(img, boxes), viz / "input_boxes.png")
        io.save_image(mesh_panel, viz / "mesh.png")
        io.save_image(draw_boxes(result.image, mapped), viz / "output_boxes.png")
        io.save_image(compose_panel(draw_boxes(img, boxes), mesh_panel, draw_boxes(result.image, mapped)),
                      viz / "panel.png")
        plot_loss_trace(result.trace, viz / "loss.png")

    payload = {
        "input": str(args.input),
        "output": str(args.out),
        "width": out_w,
        "height": out_h,
        "mode": result.mode,
        "iterations": result.iterations,
        "restarted": result.restarted,
        "uncovered_pixels": result.uncovered,
        "distortion": report.to_json() if report else None,
    }
    err = f"{report.mean_error:.4f}" if report else "n/a"
    _emit(args, payload, f"{args.out}: {out_w}x{out_h} ({result.mode}), distortion error {err}")
    return EXIT_OK


def _mesh_pair(mesh, in_size, out_size, rows_cols):
    """Rigid/deformed mesh pair for a saved mesh: an output-size mesh came from a reduction."""
    out_w, out_h = out_size
    rows, cols = rows_cols
    if (mesh.width, mesh.height) == (out_w, out_h):
        if in_size is None:
            raise UsageError("--in-size is required for a mesh in output space")
        return build_rigid_mesh(in_size[0], in_size[1], rows, cols), mesh
    if in_size is not None and (mesh.width, mesh.height) != tuple(in_size):
        raise UsageError(f"mesh is {mesh.width:g}x{mesh.height:g}; matches neither --in-size nor --out-size")
    return mesh, build_rigid_mesh(out_w, out_h, rows, cols)


def cmd_evaluate(args) -> int:
    out_size = io.parse_size(args.out_size)
    in_size = io.parse_size(args.in_size) if args.in_size else None
    mesh = io.load_mesh(args.mesh)
    box_file = io.read_box_file(args.input_boxes, in_size)
    if in_size is None and box_file.image:
        img_path = Path(box_file.image)
        if not img_path.is_absolute():
            img_path = Path(args.input_boxes).parent / img_path
        if img_path.exists():
            from PIL import Image

            with Image.open(img_path) as im:
                in_size = im.size
    src, dst = _mesh_pair(mesh, in_size, out_size, (mesh.rows, mesh.cols))
    report = measure_result(src, dst, box_file.boxes, out_size, args.box_mode)
    if args.json:
        sys.stdout.write(io.dump_json(report.to_json()))
    else:
        print(f"mean distortion error {report.mean_error!r} ({report.vanished_count} vanished)")
    return EXIT_OK


def _dataset(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory {directory} does not exist")
    items = []
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        box_path = path.with_suffix(".json")
        if not box_path.exists():
            logger.warning("%s: no box file %s; skipped", path.name, box_path.name)
            continue
        items.append((path, box_path))
    return items


def _fmt_scale(k):
    return repr(float(k))


def _bench_image(task):
    """All (method, scale) rows for one image; runs in a worker process."""
    path, box_path, scales, methods, config, mesh_dir = task
    from .warp import retarget

    img = io.load_image(path)
    h, w = img.shape[:2]
    boxes = io.load_boxes(box_path, (w, h))
    rows = []
    if not boxes:
        logger.warning("%s: no valid boxes; skipped", path.name)
        return rows
    for k in scales:
        out_w, out_h = max(1, round(k * w)), h
        for method in methods:
            if method == "scl":
                _, rule = baseline_scl(img, out_w, out_h)
                rep = distortion_error(boxes, [rule(b) for b in boxes])
            elif method == "cr":
                try:
                    _, rule, _ = baseline_cr(img, boxes, out_w, out_h)
                except UnsupportedOperationError:
                    rows.append([path.name, method, _fmt_scale(k), MISSING, MISSING])
                    continue
                rep = distortion_error(boxes, [rule(b) for b in boxes])
            else:
                res = retarget(img, boxes, out_w, out_h, config)
                rep = measure_result(res.mesh_src, res.mesh_dst, boxes, (out_w, out_h), config.box_mode)
                if mesh_dir is not None:
                    io.save_mesh(res.mesh, Path(mesh_dir) / f"{path.stem}_{method}_{k:g}.json")
            rows.append(rep.csv_row(path.name, method, _fmt_scale(k)))
    return rows


def _workers(requested):
    limit = os.cpu_count() or 1
    env = os.environ.get("RETARGET_THREADS")
    if env:
        try:
            limit = min(limit, max(1, int(env)))
        except ValueError:
            raise UsageError(f"RETARGET_THREADS must be an integer, got {env!r}") from None
    if requested:
        limit = min(limit, requested)
    return max(1, limit)


def summarise(rows, methods, scales):
    """Mean error per (method, scale) over images; None where every row is missing."""
    table = {}
    for method in methods:
        for k in scales:
            vals = [float(r[3]) for r in rows if r[1] == method and r[2] == _fmt_scale(k) and r[3] != MISSING]
            table[(method, k)] = math.fsum(vals) / len(vals) if vals else None
    return table


def _write_csv(path, header, rows):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())
    return buf.getvalue()


def cmd_bench(args) -> int:
    from .plots import plot_bench_summary

    scales = _csv_floats(args.scales, "--scales")
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise UsageError(f"--methods: unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
    config = _load_config(args)
    items = _dataset(args.dataset_dir)
    if args.dump_meshes:
        Path(args.dump_meshes).mkdir(parents=True, exist_ok=True)
    tasks = [(p, b, scales, methods, config, args.dump_meshes) for p, b in items]
    workers = min(_workers(args.workers), max(len(tasks), 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_image = list(pool.map(_bench_image, tasks))
    else:
        per_image = [_bench_image(t) for t in tasks]
    rows = [r for image_rows in per_image for r in image_rows]

    out = Path(args.out)
    _write_csv(out, ["image", "method", "scale", "mean_error", "vanished"], rows)
    table = summarise(rows, methods, scales)
    summary_rows = [[m] + [MISSING if table[(m, k)] is None else repr(table[(m, k)]) for k in scales]
                    for m in methods]
    summary_path = out.with_name(out.stem + "_summary.csv")
    text = _write_csv(summary_path, ["method"] + [f"{k:g}" for k in scales], summary_rows)
    figure = out.with_suffix(".png")
    plot_bench_summary(table, methods, scales, figure)
    payload = {"csv": str(out), "summary_csv": str(summary_path), "figure": str(figure), "images": len(items),
               "summary": {m: {f"{k:g}": table[(m, k)] for k in scales} for m in methods}}
    _emit(args, payload, text.rstrip("\n"))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    report = run_gradcheck(seed=args.seed, trials=args.trials, corrupt=args.corrupt)
    _emit(args, report.to_json(),
          f"max relative error {report.max_rel_error:.3e} over {report.components} components "
          f"({report.skipped} kink-adjacent skipped): {'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshretarget", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
        p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    p = sub.add_parser("retarget", help="retarget one image")
    p.add_argument("--input", required=True)
    p.add_argument("--boxes", required=True, help="JSON box file")
    p.add_argument("--scale", type=float, help="width factor; height is kept")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--config", help="JSON job config; explicit flags win")
    p.add_argument("--enlarge-mode", choices=["invert", "direct"])
    p.add_argument("--out", required=True)
    p.add_argument("--dump-mesh", help="write the deformed mesh as JSON")
    p.add_argument("--loss-trace", help="write per-iteration losses as JSON lines")
    p.add_argument("--viz", help="directory for overlay images and the loss plot")
    common(p)
    p.set_defaults(func=cmd_retarget)

    p = sub.add_parser("evaluate", help="distortion error of a saved mesh")
    p.add_argument("--input-boxes", required=True)
    p.add_argument("--mesh", required=True)
    p.add_argument("--out-size", required=True, help="WIDTHxHEIGHT of the output")
    p.add_argument("--in-size", help="WIDTHxHEIGHT of the input (default: from the box file's image)")
    p.add_argument("--box-mode", choices=["hull8", "corners"], default="hull8")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="benchmark methods over a dataset directory")
    p.add_argument("--dataset-dir", required=True)
    p.add_argument("--scales", default=",".join(f"{k:g}" for k in STANDARD_SCALES))
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--out", required=True, help="CSV path; summary CSV and figure are written beside it")
    p.add_argument("--config")
    p.add_argument("--enlarge-mode", choices=["invert", "direct"])
    p.add_argument("--dump-meshes", help="directory for the optimised meshes")
    p.add_argument("--workers", type=int, help="worker processes (capped by RETARGET_THREADS)")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--corrupt", action="store_true", help="perturb the analytic gradient (negative control)")
    common(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (io.ConfigError, UnsupportedOperationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        if isinstance(exc, io.BoxFileError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, UnidentifiedImageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FoldOverError as exc:
        print(f"error: fold-over persisted after restart: {exc}", file=sys.stderr)
        return EXIT_FOLDOVER
    except (OptimizationError, NumericalError) as exc:
        print(f"error: optimisation failed: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZER
    except RetargetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZER


if __name__ == "__main__":
    sys.exit(main())
