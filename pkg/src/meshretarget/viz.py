"""Diagnostic overlays: mesh lines, box outlines, side-by-side panels.

Lines are 1 px, unantialiased, rasterised with Bresenham on rounded
endpoints; pixels outside the image are skipped.
"""

from __future__ import annotations

import math

import numpy as np
from skimage.draw import line as bresenham

from .geometry import Mesh
from .warp import as_image

__all__ = ["compose_panel", "draw_boxes", "draw_mesh_overlay", "SEPARATOR"]

SEPARATOR = 4


def _colour(stroke, channels):
    c = np.atleast_1d(np.asarray(stroke, dtype=np.float64))
    if c.size == 1:
        return np.repeat(c, channels)
    if channels == 1:
        return np.array([c.mean()])
    return c[:channels]


def _round(v):
    return math.floor(v + 0.5)


def _stroke(img, p, q, colour):
    rr, cc = bresenham(_round(p[1]), _round(p[0]), _round(q[1]), _round(q[0]))
    keep = (rr >= 0) & (rr < img.shape[0]) & (cc >= 0) & (cc < img.shape[1])
    img[rr[keep], cc[keep]] = colour


def draw_mesh_overlay(img, mesh: Mesh, stroke=1.0) -> np.ndarray:
    """Copy of ``img`` with every mesh edge drawn in ``stroke``."""
    out = as_image(img).copy()
    colour = _colour(stroke, out.shape[2])
    v = mesh.vertices
    for i in range(mesh.rows + 1):
        for j in range(mesh.cols + 1):
            if j < mesh.cols:
                _stroke(out, v[i, j], v[i, j + 1], colour)
            if i < mesh.rows:
                _stroke(out, v[i, j], v[i + 1, j], colour)
    return out


def draw_boxes(img, boxes, colour=(1.0, 0.0, 0.0)) -> np.ndarray:
    """Copy of ``img`` with each box outlined.

    The outline covers pixel columns ``round(x0) .. round(x1) - 1`` and the
    matching rows.
    """
    out = as_image(img).copy()
    c = _colour(colour, out.shape[2])
    for b in boxes:
        if b is None:
            continue
        c0, c1 = _round(b.x0), _round(b.x1) - 1
        r0, r1 = _round(b.y0), _round(b.y1) - 1
        corners = [(c0, r0), (c1, r0), (c1, r1), (c0, r1)]
        for k in range(4):
            _stroke(out, corners[k], corners[(k + 1) % 4], c)
    return out


def compose_panel(*images, separator: int = SEPARATOR) -> np.ndarray:
    """Horizontal concatenation with black separators; shorter panels are padded at the bottom."""
    imgs = [as_image(im) for im in images]
    if not imgs:
        raise ValueError("need at least one image")
    channels = 3 if any(im.shape[2] == 3 for im in imgs) else 1
    height = max(im.shape[0] for im in imgs)
    parts = []
    for k, im in enumerate(imgs):
        if im.shape[2] != channels:
            im = np.repeat(im, channels, axis=2)
        if im.shape[0] < height:
            pad = np.zeros((height - im.shape[0], im.shape[1], channels))
            im = np.concatenate([im, pad], axis=0)
        if k:
            parts.append(np.zeros((height, separator, channels)))
        parts.append(im)
    return np.concatenate(parts, axis=1)
