"""Backward warping of images through a mesh pair.

Images are float arrays of shape ``(height, width, channels)`` with values in
[0, 1].  Pixel ``(c, r)`` has its centre at ``(c + 0.5, r + 0.5)``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import FoldOverError
from .geometry import Mesh, apply_motion, build_rigid_mesh, check_foldover, rescale_mesh

logger = logging.getLogger(__name__)

__all__ = [
    "RetargetResult",
    "as_image",
    "resize_bilinear",
    "retarget",
    "retarget_enlarge",
    "retarget_reduce",
    "retarget_warp",
    "sample_bilinear",
    "warp_image",
    "working_size",
]


def as_image(data) -> np.ndarray:
    """View ``data`` as a contiguous float64 ``(h, w, c)`` array."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected an (h, w), (h, w, 1) or (h, w, 3) image, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def sample_bilinear(img, p) -> np.ndarray:
    """Bilinear sample at continuous coordinate ``p = (x, y)``, clamped to the pixel centres."""
    img = as_image(img)
    out = np.empty(img.shape[2])
    _kernels.sample(img, float(p[0]), float(p[1]), out)
    return out


def resize_bilinear(img, out_width: int, out_height: int) -> np.ndarray:
    img = as_image(img)
    if out_width <= 0 or out_height <= 0:
        raise ValueError(f"target size must be positive, got {out_width}x{out_height}")
    return _kernels.resize(img, int(out_height), int(out_width))


def warp_image(img, src: Mesh, dst: Mesh, out_width: int, out_height: int):
    """Unchecked warp: returns ``(image, cell_map, uncovered_count)``.

    Each output pixel is located in ``dst`` and read from the same cell
    coordinates of ``src``.
    """
    img = as_image(img)
    if (src.rows, src.cols) != (dst.rows, dst.cols):
        raise ValueError("meshes must share rows/cols")
    out, cell_map, _, uncovered = _kernels.warp(img, src.vertices, dst.vertices, dst.rows, dst.cols,
                                                int(out_height), int(out_width))
    np.clip(out, 0.0, 1.0, out=out)
    return out, cell_map, int(uncovered)


def retarget_warp(img, mesh_in: Mesh, mesh_out: Mesh, out_width: int, out_height: int) -> np.ndarray:
    """Render the output image from a rigid input mesh and a deformed output mesh.

    Pixels not covered by ``mesh_out`` are black; their count is logged.
    """
    bad = check_foldover(mesh_out)
    if bad:
        raise FoldOverError(bad)
    out, _, uncovered = warp_image(img, mesh_in, mesh_out, out_width, out_height)
    if uncovered:
        logger.info("%d of %d output pixels fall outside the mesh", uncovered, out_width * out_height)
    return out


def working_size(width: int, height: int, long_side: int) -> tuple[float, int, int]:
    """Scale factor and size so the long side equals ``long_side``."""
    factor = long_side / max(width, height)
    return factor, max(2, math.floor(width * factor + 0.5)), max(2, math.floor(height * factor + 0.5))


@dataclass
class RetargetResult:
    image: np.ndarray
    mesh: Mesh
    motion: np.ndarray
    mesh_src: Mesh
    mesh_dst: Mesh
    mode: str
    trace: list = field(default_factory=list)
    foldover: bool = False
    restarted: bool = False
    uncovered: int = 0
    iterations: int = 0
    elapsed: float = 0.0


def _working_inputs(img, boxes, work_w, work_h):
    h, w = img.shape[:2]
    small = resize_bilinear(img, work_w, work_h)
    kx, ky = work_w / w, work_h / h
    return small, [b.scaled(kx, ky) for b in boxes]


def _make_job(config, in_w, in_h, out_w, out_h, boxes):
    from .objective import RetargetJob

    return RetargetJob(
        in_width=in_w, in_height=in_h, out_width=out_w, out_height=out_h,
        rows=config.rows, cols=config.cols, scale_s=config.scale_s, weights=config.weights,
        boxes=tuple(boxes), normalize_losses=config.normalize_losses,
        squared_geometric=config.squared_geometric, box_mode=config.box_mode,
    )


def _optimize(small, job, config):
    from .optimize import optimize_motion

    return optimize_motion(small, job, config.optim)


def _scale_result(img, out_w, out_h, config, mode):
    h, w = img.shape[:2]
    mesh_in = build_rigid_mesh(w, h, config.rows, config.cols)
    mesh_out = build_rigid_mesh(out_w, out_h, config.rows, config.cols)
    out, _, uncovered = warp_image(img, mesh_in, mesh_out, out_w, out_h)
    zero = np.zeros(mesh_out.vertices.shape)
    return RetargetResult(out, mesh_out, zero, mesh_in, mesh_out, mode, uncovered=uncovered)


def retarget_reduce(img, boxes, out_width: int, out_height: int, config=None) -> RetargetResult:
    """Optimise the mesh at working resolution, then warp the full-resolution input.

    With no boxes the objective has no data term and the result is a plain
    bilinear rescale.
    """
    from .io import JobConfig

    config = config or JobConfig()
    img = as_image(img)
    h, w = img.shape[:2]
    t0 = time.perf_counter()
    if not boxes:
        logger.warning("no object boxes given; falling back to simple scaling")
        return _scale_result(img, out_width, out_height, config, "scale")

    factor, in_w, in_h = working_size(w, h, config.working_long_side)
    out_w = max(2, math.floor(out_width * factor + 0.5))
    out_h = max(2, math.floor(out_height * factor + 0.5))
    small, small_boxes = _working_inputs(img, boxes, in_w, in_h)
    job = _make_job(config, in_w, in_h, out_w, out_h, small_boxes)
    opt = _optimize(small, job, config)

    mesh_f = rescale_mesh(apply_motion(job.mesh_out, opt.motion), out_width, out_height)
    mesh_in = build_rigid_mesh(w, h, config.rows, config.cols)
    bad = check_foldover(mesh_f)
    if bad:
        logger.warning("optimised mesh has fold-over in %d cell(s); warp may be ill-defined", len(bad))
    out, _, uncovered = warp_image(img, mesh_in, mesh_f, out_width, out_height)
    elapsed = time.perf_counter() - t0
    logger.info("reduce %dx%d -> %dx%d in %.3fs (%d iterations, %d uncovered px)",
                w, h, out_width, out_height, elapsed, opt.iterations, uncovered)
    return RetargetResult(out, mesh_f, opt.motion, mesh_in, mesh_f, "reduce", opt.trace,
                          opt.foldover, opt.restarted, uncovered, opt.iterations, elapsed)


def retarget_enlarge(img, boxes, out_width: int, out_height: int, config=None) -> RetargetResult:
    """Enlarge by inverting a reduction mesh, or by optimising the enlargement directly.

    ``invert`` (default): optimise the reduction from a virtual image of the
    target size (the bilinear upscale of the input) down to the input size,
    then read the input through the resulting deformed mesh while writing
    through the rigid output mesh.
    """
    from .io import JobConfig

    config = config or JobConfig()
    img = as_image(img)
    h, w = img.shape[:2]
    t0 = time.perf_counter()
    if not boxes:
        logger.warning("no object boxes given; falling back to simple scaling")
        return _scale_result(img, out_width, out_height, config, "scale")

    if config.enlarge_mode == "direct":
        result = retarget_reduce(img, boxes, out_width, out_height, config)
        result.mode = "enlarge-direct"
        return result
    if config.enlarge_mode != "invert":
        raise ValueError(f"unknown enlarge mode {config.enlarge_mode!r}")

    factor, virt_w, virt_h = working_size(out_width, out_height, config.working_long_side)
    small_w = max(2, math.floor(w * factor + 0.5))
    small_h = max(2, math.floor(h * factor + 0.5))
    virtual = resize_bilinear(img, virt_w, virt_h)
    kx, ky = virt_w / w, virt_h / h
    virt_boxes = [b.scaled(kx, ky) for b in boxes]
    job = _make_job(config, virt_w, virt_h, small_w, small_h, virt_boxes)
    opt = _optimize(virtual, job, config)

    mesh_src = rescale_mesh(apply_motion(job.mesh_out, opt.motion), w, h)
    mesh_dst = build_rigid_mesh(out_width, out_height, config.rows, config.cols)
    out, _, uncovered = warp_image(img, mesh_src, mesh_dst, out_width, out_height)
    elapsed = time.perf_counter() - t0
    logger.info("enlarge %dx%d -> %dx%d in %.3fs (%d iterations)", w, h, out_width, out_height,
                elapsed, opt.iterations)
    return RetargetResult(out, mesh_src, opt.motion, mesh_src, mesh_dst, "enlarge", opt.trace,
                          opt.foldover, opt.restarted, uncovered, opt.iterations, elapsed)


def retarget(img, boxes, out_width: int, out_height: int, config=None) -> RetargetResult:
    """Pick the reduction or enlargement path from the target size."""
    img = as_image(img)
    h, w = img.shape[:2]
    if out_width > w or out_height > h:
        if out_width < w or out_height < h:
            raise ValueError("mixed enlargement and reduction is not supported")
        return retarget_enlarge(img, boxes, out_width, out_height, config)
    return retarget_reduce(img, boxes, out_width, out_height, config)
