"""Retargeting objective: object, geometric and boundary losses.

All losses are functions of the motion field ``f`` added to the rigid output
mesh ``M_J``.  The deformed mesh ``M_f = M_J + f`` and the rigid input mesh
``M_I`` define the backward warp from the input image to the output.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import DegenerateInputError
from .geometry import (Mesh, ObjectBox, apply_motion, box_samples, build_rigid_mesh, foldover_mask,
                       locate_in_rigid)
from .warp import as_image, resize_bilinear

logger = logging.getLogger(__name__)

__all__ = [
    "LossReport",
    "LossWeights",
    "Objective",
    "RetargetJob",
    "boundary_loss",
    "crop_rect",
    "edge_weights",
    "geometric_loss",
    "object_loss",
    "total_loss",
]


@dataclass(frozen=True)
class LossWeights:
    lambda_o: float = 1.0
    lambda_g: float = 0.1
    lambda_b: float = 0.01

    def __post_init__(self):
        for name in ("lambda_o", "lambda_g", "lambda_b"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be a finite non-negative number, got {value}")


@dataclass(frozen=True, eq=False)
class RetargetJob:
    """One retargeting problem at the resolution the losses are evaluated at.

    ``scale_s=None`` derives the object scale from the areas of the two
    image sizes; a number overrides it (ablation).
    """

    in_width: int
    in_height: int
    out_width: int
    out_height: int
    rows: int = 8
    cols: int = 8
    scale_s: float | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    boxes: tuple = ()
    normalize_losses: bool = False
    squared_geometric: bool = False
    box_mode: str = "hull8"

    def __post_init__(self):
        for name in ("in_width", "in_height", "out_width", "out_height"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.rows < 2 or self.cols < 2:
            raise ValueError(f"mesh resolution must be at least 2x2, got {self.rows}x{self.cols}")
        if self.scale_s is not None and not self.scale_s > 0:
            raise ValueError(f"scale_s must be positive, got {self.scale_s}")
        object.__setattr__(self, "boxes", tuple(self.boxes))

    @property
    def s(self) -> float:
        if self.scale_s is not None:
            return float(self.scale_s)
        return math.sqrt((self.out_width * self.out_height) / (self.in_width * self.in_height))

    @property
    def d_u(self) -> float:
        return self.out_width / (2 * self.cols)

    @property
    def d_v(self) -> float:
        return self.out_height / (2 * self.rows)

    @cached_property
    def mesh_in(self) -> Mesh:
        return build_rigid_mesh(self.in_width, self.in_height, self.rows, self.cols)

    @cached_property
    def mesh_out(self) -> Mesh:
        return build_rigid_mesh(self.out_width, self.out_height, self.rows, self.cols)

    def zero_motion(self) -> np.ndarray:
        return np.zeros((self.rows + 1, self.cols + 1, 2))


@dataclass
class LossReport:
    total: float
    object: float
    geometric: float
    boundary: float
    foldover: bool = False

    def to_json(self, iteration: int) -> dict:
        return {
            "iter": iteration,
            "total": self.total,
            "object": self.object,
            "geometric": self.geometric,
            "boundary": self.boundary,
        }


def crop_rect(box: ObjectBox, width: int, height: int):
    """Integer pixel rectangle ``(x0, y0, x1, y1)`` (end-exclusive) covered by ``box``.

    The origin and the extent are rounded separately so a box whose size is
    an exact multiple of another keeps the same pixel size ratio.  The result
    is clipped to the image and may be empty.
    """
    x0 = math.floor(box.x0 + 0.5)
    y0 = math.floor(box.y0 + 0.5)
    x1 = x0 + max(1, math.floor(box.width + 0.5))
    y1 = y0 + max(1, math.floor(box.height + 0.5))
    cx0, cy0 = min(max(x0, 0), width), min(max(y0, 0), height)
    cx1, cy1 = min(max(x1, 0), width), min(max(y1, 0), height)
    if (cx0, cy0, cx1, cy1) != (x0, y0, x1, y1):
        logger.debug("box %r clipped to the %dx%d image", box.id, width, height)
    return cx0, cy0, max(cx1, cx0), max(cy1, cy0)


def _downsampled_crop(image, box, scale_s):
    h, w = image.shape[:2]
    x0, y0, x1, y1 = crop_rect(box, w, h)
    if x1 <= x0 or y1 <= y0:
        raise DegenerateInputError(f"input box {box.id!r} does not overlap the image")
    crop = image[y0:y1, x0:x1]
    ch, cw = crop.shape[:2]
    th = max(1, math.floor(ch * scale_s + 0.5))
    tw = max(1, math.floor(cw * scale_s + 0.5))
    return resize_bilinear(crop, tw, th)


def _padded_mse(target, crop):
    hc = max(target.shape[0], crop.shape[0])
    wc = max(target.shape[1], crop.shape[1])
    channels = target.shape[2]
    a = np.zeros((hc, wc, channels))
    b = np.zeros((hc, wc, channels))
    a[: target.shape[0], : target.shape[1]] = target
    b[: crop.shape[0], : crop.shape[1]] = crop
    return float(np.mean((a - b) ** 2)), (hc, wc)


def object_loss(input_image, warped, boxes_in, boxes_out, scale_s: float = 1.0) -> float:
    """Mean over objects of the MSE between the scaled input crop and the output crop.

    Each input crop is resampled by ``scale_s``; both crops are then
    zero-padded at the bottom/right to their common size.
    """
    if len(boxes_in) != len(boxes_out):
        raise ValueError("boxes_in and boxes_out must be index-aligned")
    if not boxes_in:
        raise DegenerateInputError("object loss needs at least one object")
    input_image = as_image(input_image)
    warped = as_image(warped)
    oh, ow = warped.shape[:2]
    total = 0.0
    for bi, bo in zip(boxes_in, boxes_out):
        target = _downsampled_crop(input_image, bi, scale_s)
        x0, y0, x1, y1 = crop_rect(bo, ow, oh)
        mse, _ = _padded_mse(target, warped[y0:y1, x0:x1])
        total += mse
    return total / len(boxes_in)


def edge_weights(mesh_in: Mesh, boxes) -> tuple[np.ndarray, np.ndarray]:
    """Edge masks: ``(rows+1, cols)`` horizontal and ``(rows, cols+1)`` vertical.

    An edge counts when both endpoints lie in the same box (closed rectangle).
    """
    verts = mesh_in.vertices
    horiz = np.zeros((mesh_in.rows + 1, mesh_in.cols), dtype=bool)
    vert = np.zeros((mesh_in.rows, mesh_in.cols + 1), dtype=bool)
    for box in boxes:
        inside = (
            (verts[..., 0] >= box.x0) & (verts[..., 0] <= box.x1)
            & (verts[..., 1] >= box.y0) & (verts[..., 1] <= box.y1)
        )
        horiz |= inside[:, :-1] & inside[:, 1:]
        vert |= inside[:-1, :] & inside[1:, :]
    return horiz, vert


def _edge_residuals(mesh_in_vertices, mesh_f_vertices, scale_s):
    # scaling before differencing makes an exactly scaled mesh give exact zeros
    vi = scale_s * mesh_in_vertices
    vf = mesh_f_vertices
    rh = (vi[:, 1:] - vi[:, :-1]) - (vf[:, 1:] - vf[:, :-1])
    rv = (vi[1:, :] - vi[:-1, :]) - (vf[1:, :] - vf[:-1, :])
    return rh, rv


def geometric_loss(mesh_in: Mesh, mesh_f: Mesh, boxes_in, scale_s: float,
                   normalize: bool = False, squared: bool = False) -> float:
    """Sum over in-object edges of ``|| s * e - e' ||``.

    ``normalize`` divides by the number of in-object edges; ``squared`` uses
    the squared norm instead.
    """
    if (mesh_in.rows, mesh_in.cols) != (mesh_f.rows, mesh_f.cols):
        raise ValueError("meshes must share rows/cols")
    bh, bv = edge_weights(mesh_in, boxes_in)
    count = int(bh.sum() + bv.sum())
    if count == 0:
        return 0.0
    rh, rv = _edge_residuals(mesh_in.vertices, mesh_f.vertices, scale_s)
    nh = np.sum(rh * rh, axis=-1)
    nv = np.sum(rv * rv, axis=-1)
    if not squared:
        nh = np.sqrt(nh)
        nv = np.sqrt(nv)
    loss = float(nh[bh].sum() + nv[bv].sum())
    return loss / count if normalize else loss


def boundary_vertex_count(rows: int, cols: int) -> int:
    # corners sit in both boundary sets
    return 2 * (cols + 1) + 2 * (rows + 1)


def boundary_loss(motion, mesh_out_rigid: Mesh, d_u: float, d_v: float, normalize: bool = False) -> float:
    """Normal displacement of boundary vertices plus tangential slack beyond ``d_u``/``d_v``."""
    f = np.asarray(motion, dtype=np.float64)
    if f.shape != mesh_out_rigid.vertices.shape:
        raise ValueError(f"motion shape {f.shape} does not match mesh {mesh_out_rigid.vertices.shape}")
    top_bottom = f[[0, -1], :, :]
    left_right = f[:, [0, -1], :]
    loss = (
        np.abs(top_bottom[..., 1]).sum()
        + np.abs(left_right[..., 0]).sum()
        + np.maximum(np.abs(top_bottom[..., 0]) - d_u, 0.0).sum()
        + np.maximum(np.abs(left_right[..., 1]) - d_v, 0.0).sum()
    )
    if normalize:
        loss /= boundary_vertex_count(mesh_out_rigid.rows, mesh_out_rigid.cols)
    return float(loss)


@dataclass
class Evaluation:
    """Loss report plus the intermediate state the gradient needs."""

    report: LossReport
    motion: np.ndarray
    mesh_f: Mesh
    warped: np.ndarray
    cell_map: np.ndarray
    uv_map: np.ndarray
    uncovered: int
    boxes_out: list
    crops: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    active: np.ndarray
    terms: np.ndarray


class Objective:
    """Precomputed pieces of a job (meshes, edge masks, scaled input crops)."""

    def __init__(self, image, job: RetargetJob):
        image = as_image(image)
        if image.shape[:2] != (job.in_height, job.in_width):
            raise ValueError(
                f"image is {image.shape[1]}x{image.shape[0]}, job expects {job.in_width}x{job.in_height}"
            )
        self.image = image
        self.job = job
        self.s = job.s
        self.mesh_in = job.mesh_in
        self.mesh_out = job.mesh_out
        self.beta_h, self.beta_v = edge_weights(self.mesh_in, job.boxes)
        self.edge_count = int(self.beta_h.sum() + self.beta_v.sum())
        self.targets = [_downsampled_crop(image, b, self.s) for b in job.boxes]
        self.target_shapes = np.array([t.shape[:2] for t in self.targets], dtype=np.int64).reshape(-1, 2)
        # each box's sample points as (row, col, u, v) in the input mesh
        count = len(box_samples(ObjectBox(0, 0, 1, 1), job.box_mode))
        self.samples = np.zeros((len(job.boxes), count, 4))
        for k, box in enumerate(job.boxes):
            for m, p in enumerate(box_samples(box, job.box_mode)):
                self.samples[k, m] = locate_in_rigid(self.mesh_in, p)

    def geometric(self, mesh_f: Mesh) -> float:
        return geometric_loss(self.mesh_in, mesh_f, self.job.boxes, self.s,
                              self.job.normalize_losses, self.job.squared_geometric)

    def boundary(self, motion) -> float:
        return boundary_loss(motion, self.mesh_out, self.job.d_u, self.job.d_v, self.job.normalize_losses)

    def map_boxes(self, mesh_f: Mesh) -> list:
        out = []
        for k, box in enumerate(self.job.boxes):
            x0, y0, x1, y1 = _kernels.map_box_samples(mesh_f.vertices, self.samples[k])
            out.append(ObjectBox(x0, y0, x1, y1, box.id))
        return out

    def warp(self, mesh_f: Mesh):
        return _kernels.warp(self.image, self.mesh_in.vertices, mesh_f.vertices,
                             mesh_f.rows, mesh_f.cols, self.job.out_height, self.job.out_width)

    def crop_tables(self, boxes_out):
        """Output crop rectangles and zero-padded targets for the object term."""
        n = len(boxes_out)
        oh, ow = self.job.out_height, self.job.out_width
        crops = np.zeros((n, 4), dtype=np.int64)
        sizes = []
        for k, (box, target) in enumerate(zip(boxes_out, self.targets)):
            crops[k] = crop_rect(box, ow, oh)
            hj = crops[k, 3] - crops[k, 1]
            wj = crops[k, 2] - crops[k, 0]
            sizes.append((max(target.shape[0], hj), max(target.shape[1], wj)))
        hmax = max((s[0] for s in sizes), default=1)
        wmax = max((s[1] for s in sizes), default=1)
        channels = self.image.shape[2]
        targets = np.zeros((n, hmax, wmax, channels))
        weights = np.zeros(n)
        for k, target in enumerate(self.targets):
            targets[k, : target.shape[0], : target.shape[1]] = target
            weights[k] = 1.0 / (n * sizes[k][0] * sizes[k][1] * channels)
        return crops, targets, weights

    def object_terms(self, warped, crops, targets, weights):
        """Per-object weighted squared error; sums to the object loss."""
        terms = np.zeros(len(crops))
        for k in range(len(crops)):
            x0, y0, x1, y1 = crops[k]
            t = self.targets[k]
            hc = max(t.shape[0], y1 - y0)
            wc = max(t.shape[1], x1 - x0)
            a = np.zeros((hc, wc, t.shape[2]))
            b = np.zeros_like(a)
            a[: t.shape[0], : t.shape[1]] = t
            b[: y1 - y0, : x1 - x0] = warped[y0:y1, x0:x1]
            terms[k] = weights[k] * float(np.sum((a - b) ** 2))
        return terms

    def evaluate(self, motion) -> Evaluation:
        motion = np.asarray(motion, dtype=np.float64)
        mesh_f = apply_motion(self.mesh_out, motion)
        folded = bool(foldover_mask(mesh_f.vertices).any())
        w = self.job.weights
        geo = self.geometric(mesh_f)
        bnd = self.boundary(motion)
        if self.job.boxes:
            boxes_out = self.map_boxes(mesh_f)
            warped, cell_map, uv_map, uncovered = self.warp(mesh_f)
            crops, targets, weights = self.crop_tables(boxes_out)
            terms = self.object_terms(warped, crops, targets, weights)
            obj = float(terms.sum())
            active = terms > 0.0
        else:
            boxes_out = []
            warped = cell_map = uv_map = None
            uncovered = 0
            crops = np.zeros((0, 4), dtype=np.int64)
            targets = np.zeros((0, 1, 1, self.image.shape[2]))
            weights = np.zeros(0)
            active = np.zeros(0, dtype=bool)
            terms = np.zeros(0)
            obj = 0.0
        total = w.lambda_o * obj + w.lambda_g * geo + w.lambda_b * bnd
        report = LossReport(total, obj, geo, bnd, folded)
        return Evaluation(report, motion, mesh_f, warped, cell_map, uv_map, uncovered,
                          boxes_out, crops, targets, weights, active, terms)


def total_loss(image, motion, job: RetargetJob) -> LossReport:
    """Weighted sum of the three losses at ``motion``; flags fold-over."""
    return Objective(image, job).evaluate(motion).report
