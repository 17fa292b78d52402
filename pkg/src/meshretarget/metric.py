"""Aspect-ratio distortion error and the crop / scale baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, UnsupportedOperationError
from .geometry import Mesh, ObjectBox, map_box
from .warp import as_image, resize_bilinear, working_size

__all__ = [
    "VANISHED",
    "CropWindow",
    "DistortionReport",
    "ObjectError",
    "baseline_cr",
    "baseline_scl",
    "best_crop_window",
    "covered_area",
    "distortion_error",
    "measure_result",
]

# marker for an object that is absent from the output
VANISHED = None

VANISH_CLIP_FRACTION = 0.95


@dataclass
class ObjectError:
    id: str
    aspect_in: float
    aspect_out: float
    error: float
    vanished: bool = False


@dataclass
class DistortionReport:
    per_object: list = field(default_factory=list)
    mean_error: float = 0.0
    vanished_count: int = 0

    def to_json(self) -> dict:
        return {
            "mean_error": self.mean_error,
            "vanished_count": self.vanished_count,
            "per_object": [
                {"id": o.id, "aspect_in": o.aspect_in, "aspect_out": o.aspect_out,
                 "error": o.error, "vanished": o.vanished}
                for o in self.per_object
            ],
        }

    def csv_row(self, image: str, method: str, scale) -> list:
        return [image, method, scale, repr(float(self.mean_error)), self.vanished_count]


def distortion_error(boxes_in, boxes_out) -> DistortionReport:
    """Mean relative change of width/height ratio; a vanished object scores 1."""
    if len(boxes_in) != len(boxes_out):
        raise ValueError("boxes_in and boxes_out must be index-aligned")
    if not boxes_in:
        raise DegenerateInputError("distortion error is undefined without objects")
    per_object = []
    for bi, bo in zip(boxes_in, boxes_out):
        r_in = bi.aspect
        if bo is VANISHED:
            per_object.append(ObjectError(bi.id, r_in, 0.0, 1.0, True))
            continue
        r_out = bo.aspect
        per_object.append(ObjectError(bi.id, r_in, r_out, abs(r_in - r_out) / r_in))
    mean = math.fsum(o.error for o in per_object) / len(per_object)
    return DistortionReport(per_object, mean, sum(o.vanished for o in per_object))


def clip_or_vanish(box: ObjectBox, width: float, height: float, fraction: float = VANISH_CLIP_FRACTION):
    """Clip to the output rectangle; VANISHED if (almost) nothing is left."""
    clipped = box.clipped(width, height)
    if clipped is None or clipped.area <= (1.0 - fraction) * box.area:
        return VANISHED
    return clipped


def measure_result(mesh_src: Mesh, mesh_dst: Mesh, boxes_in, out_rect, box_mode: str = "hull8") -> DistortionReport:
    """Distortion error of a mesh-driven result, boxes carried through the meshes.

    ``mesh_src`` lives in input space and ``mesh_dst`` in output space
    (rigid input / deformed output for reduction, the reverse for
    enlargement).  ``out_rect`` is ``(width, height)`` of the output.
    """
    width, height = out_rect
    mapped = [clip_or_vanish(map_box(mesh_src, mesh_dst, b, box_mode), width, height) for b in boxes_in]
    return distortion_error(boxes_in, mapped)


def baseline_scl(img, out_width: int, out_height: int):
    """Simple scaling: the bilinear resize and its box rule."""
    img = as_image(img)
    h, w = img.shape[:2]
    if out_width <= 0 or out_height <= 0:
        raise ValueError("target size must be positive")
    kx, ky = out_width / w, out_height / h
    if (out_width, out_height) == (w, h):
        out = img.copy()
    else:
        out = resize_bilinear(img, out_width, out_height)

    def rule(box):
        return box.scaled(kx, ky)

    return out, rule


def _overlap(lo, hi, starts, size):
    return np.clip(np.minimum(hi, starts + size) - np.maximum(lo, starts), 0.0, None)


def covered_area(boxes, x: float, y: float, width: float, height: float) -> float:
    """Total box area inside the window ``[x, x+width] x [y, y+height]``."""
    total = 0.0
    for b in boxes:
        total += max(0.0, min(b.x1, x + width) - max(b.x0, x)) * max(0.0, min(b.y1, y + height) - max(b.y0, y))
    return total


def _area_table(boxes, xs, ys, width, height):
    table = np.zeros((len(ys), len(xs)))
    for b in boxes:
        ox = _overlap(b.x0, b.x1, xs, width)
        oy = _overlap(b.y0, b.y1, ys, height)
        table += np.outer(oy, ox)
    return table


def _pick(table, xs, ys, cx, cy):
    # ties go to the window closest to the centred one, then row-major order
    best = table.max()
    cand = np.argwhere(table >= best - 1e-9 * max(best, 1.0))
    dist = (ys[cand[:, 0]] - cy) ** 2 + (xs[cand[:, 1]] - cx) ** 2
    k = int(np.argmin(dist))
    return int(xs[cand[k, 1]]), int(ys[cand[k, 0]]), float(table[cand[k, 0], cand[k, 1]])


@dataclass(frozen=True)
class CropWindow:
    x: int
    y: int
    width: int
    height: int
    covered: float


def best_crop_window(boxes, in_width: int, in_height: int, out_width: int, out_height: int,
                     long_side: int = 224) -> CropWindow:
    """Window of the target size covering the most box area.

    Exhaustive 1 px scan on a copy scaled so its long side is ``long_side``,
    then a local full-resolution scan around the winner.
    """
    if out_width > in_width or out_height > in_height:
        raise UnsupportedOperationError("cropping cannot enlarge an image")
    factor, _, _ = working_size(in_width, in_height, long_side)
    factor = min(factor, 1.0)
    small = [b.scaled(factor, factor) for b in boxes]
    sw, sh = out_width * factor, out_height * factor
    xs = np.arange(0, math.floor(in_width * factor - sw + 1e-9) + 1, dtype=np.float64)
    ys = np.arange(0, math.floor(in_height * factor - sh + 1e-9) + 1, dtype=np.float64)
    cx = (in_width * factor - sw) / 2
    cy = (in_height * factor - sh) / 2
    x, y, _ = _pick(_area_table(small, xs, ys, sw, sh), xs, ys, cx, cy)

    radius = math.ceil(1.0 / factor) + 1
    x_full = round(x / factor)
    y_full = round(y / factor)
    xs = np.arange(max(0, x_full - radius), min(in_width - out_width, x_full + radius) + 1, dtype=np.float64)
    ys = np.arange(max(0, y_full - radius), min(in_height - out_height, y_full + radius) + 1, dtype=np.float64)
    x, y, covered = _pick(_area_table(boxes, xs, ys, out_width, out_height), xs, ys,
                          (in_width - out_width) / 2, (in_height - out_height) / 2)
    return CropWindow(x, y, out_width, out_height, covered)


def baseline_cr(img, boxes, out_width: int, out_height: int):
    """Cropping baseline; reduction only.

    Returns ``(image, rule, window)``; the rule translates a box into the
    crop, clips it, and returns VANISHED when it lies fully outside.
    """
    img = as_image(img)
    h, w = img.shape[:2]
    if out_width > w or out_height > h:
        raise UnsupportedOperationError("cropping is only defined for reduction")
    win = best_crop_window(boxes, w, h, out_width, out_height)
    out = img[win.y:win.y + out_height, win.x:win.x + out_width].copy()

    def rule(box):
        moved = box.translated(-win.x, -win.y)
        clipped = moved.clipped(out_width, out_height)
        return VANISHED if clipped is None else clipped

    return out, rule, win
