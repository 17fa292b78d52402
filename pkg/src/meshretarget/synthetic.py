"""Synthetic test images: flat-colour rectangles on a textured background.

Objects are large so that a half-width output leaves little or no room to
keep them at their original size: a single object is 100-150 px wide and a
pair totals at least 130 px.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import ObjectBox

SIZE = 224
CELL = 28


def textured_background(rng, size=SIZE):
    """Smooth random waves plus mild noise, values in [0.15, 0.85]."""
    y, x = np.mgrid[0:size, 0:size] + 0.5
    img = np.zeros((size, size, 3))
    for ch in range(3):
        acc = np.zeros((size, size))
        for _ in range(4):
            fx, fy = rng.uniform(0.02, 0.12, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            acc += np.sin(fx * x + fy * y + phase)
        acc /= 4
        acc += 0.15 * rng.standard_normal((size, size))
        img[..., ch] = 0.5 + 0.3 * np.clip(acc, -1, 1)
    return img


def _random_box(rng, x_range, widths, size=SIZE):
    w = rng.integers(*widths)
    h = rng.integers(60, 116)
    x0 = rng.integers(x_range[0], max(x_range[0] + 1, x_range[1] - w))
    y0 = rng.integers(CELL, size - CELL - h)
    return int(x0), int(y0), int(x0 + w), int(y0 + h)


def make_fixture(index: int, size: int = SIZE):
    """Deterministic fixture ``index``: even indices hold one object, odd two."""
    rng = np.random.default_rng(1000 + index)
    img = textured_background(rng, size)
    if index % 2 == 0:
        rects = [_random_box(rng, (CELL // 2, size - CELL // 2), (100, 151), size)]
    else:
        half = size // 2
        rects = [
            _random_box(rng, (4, half - 4), (65, 101), size),
            _random_box(rng, (half + 4, size - 4), (65, 101), size),
        ]
    boxes = []
    for k, (x0, y0, x1, y1) in enumerate(rects):
        colour = rng.uniform(0.05, 0.95, size=3)
        img[y0:y1, x0:x1] = colour
        boxes.append(ObjectBox(float(x0), float(y0), float(x1), float(y1), f"obj{k}"))
    return img, boxes


def fixture_suite(count: int = 10, size: int = SIZE):
    return [make_fixture(i, size) for i in range(count)]


def write_dataset(directory, count: int = 10, size: int = SIZE) -> list[Path]:
    """Write ``fixture_XX.png`` plus sibling ``fixture_XX.json`` box files."""
    from .io import save_boxes, save_image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        img, boxes = make_fixture(i, size)
        stem = f"fixture_{i:02d}"
        save_image(img, directory / f"{stem}.png")
        save_boxes(boxes, directory / f"{stem}.json", image=f"{stem}.png")
        paths.append(directory / f"{stem}.png")
    return paths
