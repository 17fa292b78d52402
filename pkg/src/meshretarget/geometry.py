"""Meshes, point location and box mapping.

Coordinates are continuous pixels with the origin at the top-left corner,
``x`` to the right and ``y`` down.  A mesh with ``rows`` = U and ``cols`` = V
has ``(U+1) x (V+1)`` vertices stored row-major in an array of shape
``(U+1, V+1, 2)``; vertex ``(i, j)`` is row ``i``, column ``j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import NumericalError, OutOfBoundsError, OutsideMeshError

__all__ = [
    "CellCoord",
    "Mesh",
    "ObjectBox",
    "apply_motion",
    "bilinear_eval",
    "box_samples",
    "build_rigid_mesh",
    "check_foldover",
    "locate_in_deformed",
    "locate_in_rigid",
    "map_box",
    "map_point",
    "rescale_mesh",
]


class CellCoord(NamedTuple):
    """Cell index plus local bilinear coordinates (``u`` vertical, ``v`` horizontal)."""

    row: int
    col: int
    u: float
    v: float


@dataclass(frozen=True, eq=False)
class Mesh:
    rows: int
    cols: int
    width: float
    height: float
    vertices: np.ndarray = field(repr=False)

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=np.float64)
        if verts.shape != (self.rows + 1, self.cols + 1, 2):
            raise ValueError(
                f"vertex array has shape {verts.shape}, expected {(self.rows + 1, self.cols + 1, 2)}"
            )
        if not np.all(np.isfinite(verts)):
            raise ValueError("mesh vertices must be finite")
        verts.flags.writeable = False
        object.__setattr__(self, "vertices", verts)

    @property
    def shape(self):
        return self.vertices.shape

    def rigid_vertices(self) -> np.ndarray:
        return _rigid_vertices(self.width, self.height, self.rows, self.cols)

    @cached_property
    def is_rigid(self) -> bool:
        return bool(np.array_equal(self.vertices, self.rigid_vertices()))

    def allclose(self, other: "Mesh", atol: float = 1e-9) -> bool:
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and math.isclose(self.width, other.width, abs_tol=atol)
            and math.isclose(self.height, other.height, abs_tol=atol)
            and bool(np.allclose(self.vertices, other.vertices, rtol=0.0, atol=atol))
        )


@dataclass(frozen=True)
class ObjectBox:
    """Axis-aligned object box ``[x0, x1] x [y0, y1]`` in pixels."""

    x0: float
    y0: float
    x1: float
    y1: float
    id: str = ""

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"box {self.id!r}: {name} is not finite")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(
                f"box {self.id!r}: need x0 < x1 and y0 < y1, got ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def aspect(self) -> float:
        return self.width / self.height

    def scaled(self, kx: float, ky: float) -> "ObjectBox":
        return replace(self, x0=self.x0 * kx, y0=self.y0 * ky, x1=self.x1 * kx, y1=self.y1 * ky)

    def translated(self, dx: float, dy: float) -> "ObjectBox":
        return replace(self, x0=self.x0 + dx, y0=self.y0 + dy, x1=self.x1 + dx, y1=self.y1 + dy)

    def clipped(self, width: float, height: float) -> "ObjectBox | None":
        """Intersection with ``[0, width] x [0, height]``; None when empty."""
        x0, y0 = max(self.x0, 0.0), max(self.y0, 0.0)
        x1, y1 = min(self.x1, width), min(self.y1, height)
        if x0 >= x1 or y0 >= y1:
            return None
        return replace(self, x0=x0, y0=y0, x1=x1, y1=y1)

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1


def _rigid_vertices(width, height, rows, cols):
    j = np.arange(cols + 1, dtype=np.float64)
    i = np.arange(rows + 1, dtype=np.float64)
    verts = np.empty((rows + 1, cols + 1, 2))
    verts[..., 0] = (j * width / cols)[None, :]
    verts[..., 1] = (i * height / rows)[:, None]
    return verts


def build_rigid_mesh(width: float, height: float, rows: int = 8, cols: int = 8) -> Mesh:
    """Uniform grid spanning ``[0, width] x [0, height]``."""
    if not (width > 0 and height > 0):
        raise ValueError(f"mesh size must be positive, got {width}x{height}")
    if rows < 1 or cols < 1:
        raise ValueError(f"mesh resolution must be at least 1x1, got {rows}x{cols}")
    return Mesh(int(rows), int(cols), float(width), float(height), _rigid_vertices(width, height, rows, cols))


def apply_motion(base: Mesh, motion: np.ndarray) -> Mesh:
    motion = np.asarray(motion, dtype=np.float64)
    if motion.shape != base.vertices.shape:
        raise ValueError(f"motion shape {motion.shape} does not match mesh {base.vertices.shape}")
    return Mesh(base.rows, base.cols, base.width, base.height, base.vertices + motion)


def bilinear_eval(mesh: Mesh, cell: CellCoord) -> tuple[float, float]:
    return _kernels.bilinear_point(mesh.vertices, cell.row, cell.col, cell.u, cell.v)


def locate_in_rigid(mesh: Mesh, p) -> CellCoord:
    """Closed-form location in a rigid mesh.

    A point on an interior grid line belongs to the cell that starts there;
    the far edges of the last row/column are included with ``u``/``v`` = 1.
    """
    x, y = float(p[0]), float(p[1])
    tol = 1e-9 * max(mesh.width, mesh.height, 1.0)
    if not (-tol <= x <= mesh.width + tol and -tol <= y <= mesh.height + tol):
        raise OutOfBoundsError(f"point ({x}, {y}) outside mesh rectangle {mesh.width}x{mesh.height}")
    gx = min(max(x, 0.0), mesh.width) * mesh.cols / mesh.width
    gy = min(max(y, 0.0), mesh.height) * mesh.rows / mesh.height
    col = min(max(math.floor(gx), 0), mesh.cols - 1)
    row = min(max(math.floor(gy), 0), mesh.rows - 1)
    return CellCoord(row, col, gy - row, gx - col)


def locate_in_deformed(mesh: Mesh, p, hint: CellCoord | None = None) -> CellCoord:
    """Inverse bilinear location in an arbitrary (fold-over free) mesh.

    Search order is the hint cell, its neighbours, then every cell.  Each
    cell is solved by Newton's method from (0.5, 0.5) with a closed-form
    quadratic fallback.
    """
    x, y = float(p[0]), float(p[1])
    hi, hj = (hint.row, hint.col) if hint is not None else (-1, -1)
    i, j, u, v, found = _kernels.locate(mesh.vertices, mesh.rows, mesh.cols, x, y, hi, hj)
    if not found:
        raise OutsideMeshError(f"point ({x}, {y}) is not covered by the mesh")
    cell = CellCoord(int(i), int(j), float(u), float(v))
    rx, ry = bilinear_eval(mesh, cell)
    if math.hypot(rx - x, ry - y) > 1e-6:
        raise NumericalError(f"inverse bilinear residual too large at ({x}, {y}) in cell ({i},{j})")
    return cell


def _locate(mesh: Mesh, p) -> CellCoord:
    if mesh.is_rigid:
        return locate_in_rigid(mesh, p)
    return locate_in_deformed(mesh, p)


def map_point(src: Mesh, dst: Mesh, p) -> tuple[float, float]:
    """Carry ``p`` from ``src`` space to ``dst`` space through shared cell coordinates.

    ``src`` is normally rigid; a deformed ``src`` (the enlargement path)
    falls back to inverse bilinear location.
    """
    if (src.rows, src.cols) != (dst.rows, dst.cols):
        raise ValueError("meshes must share rows/cols")
    if src.is_rigid and dst.is_rigid:
        # two rigid meshes differ by an axis scale; skip the cell round trip
        locate_in_rigid(src, p)
        return float(p[0]) * dst.width / src.width, float(p[1]) * dst.height / src.height
    return bilinear_eval(dst, _locate(src, p))


def box_samples(box: ObjectBox, mode: str = "hull8") -> list:
    """Points of ``box`` that are carried through a mesh when mapping it."""
    xm = 0.5 * (box.x0 + box.x1)
    ym = 0.5 * (box.y0 + box.y1)
    pts = [(box.x0, box.y0), (box.x1, box.y0), (box.x0, box.y1), (box.x1, box.y1)]
    if mode == "hull8":
        pts += [(xm, box.y0), (xm, box.y1), (box.x0, ym), (box.x1, ym)]
    elif mode != "corners":
        raise ValueError(f"unknown box mapping mode {mode!r}")
    return pts


def map_box(src: Mesh, dst: Mesh, box: ObjectBox, mode: str = "hull8") -> ObjectBox:
    """Axis-aligned hull of the box's corners (and edge midpoints) mapped to ``dst``."""
    mapped = np.array([map_point(src, dst, p) for p in box_samples(box, mode)])
    x0, y0 = mapped.min(axis=0)
    x1, y1 = mapped.max(axis=0)
    return ObjectBox(float(x0), float(y0), float(x1), float(y1), box.id)


def rescale_mesh(mesh: Mesh, new_width: float, new_height: float) -> Mesh:
    if not (new_width > 0 and new_height > 0):
        raise ValueError(f"target size must be positive, got {new_width}x{new_height}")
    k = np.array([new_width / mesh.width, new_height / mesh.height])
    return Mesh(mesh.rows, mesh.cols, float(new_width), float(new_height), mesh.vertices * k)


def _tri_area(a, b, c):
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])


def foldover_mask(vertices: np.ndarray) -> np.ndarray:
    """Boolean ``(rows, cols)`` mask of quads with a non-positive triangle."""
    p00 = vertices[:-1, :-1]
    p01 = vertices[:-1, 1:]
    p10 = vertices[1:, :-1]
    p11 = vertices[1:, 1:]
    bad = (
        (_tri_area(p00, p01, p11) <= 0)
        | (_tri_area(p00, p11, p10) <= 0)
        | (_tri_area(p00, p01, p10) <= 0)
        | (_tri_area(p01, p11, p10) <= 0)
    )
    return bad


def check_foldover(mesh: Mesh) -> list[tuple[int, int]]:
    """Cells whose two triangulations are not both positively oriented."""
    return [(int(i), int(j)) for i, j in zip(*np.nonzero(foldover_mask(mesh.vertices)))]
