"""Image codecs, box files, job configs, mesh and report serialisation.

All JSON is written with ``indent=2`` and Python's shortest round-trip float
repr, so save -> load -> save reproduces the same bytes.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image

from .geometry import Mesh, ObjectBox
from .objective import LossWeights
from .optimize import OptimConfig

logger = logging.getLogger(__name__)

__all__ = [
    "BoxFile",
    "ConfigError",
    "JobConfig",
    "BoxFileError",
    "dump_json",
    "load_boxes",
    "load_config",
    "load_image",
    "load_mesh",
    "mesh_from_json",
    "mesh_to_json",
    "read_box_file",
    "save_boxes",
    "save_config",
    "save_image",
    "save_mesh",
    "save_report",
]

LARGE_BOX_FRACTION = 0.5


class ConfigError(ValueError):
    """Schema violation in a config or mesh file; the message carries the field path."""


class BoxFileError(ValueError):
    """Malformed box file."""


@dataclass(frozen=True)
class JobConfig:
    """User-facing settings for one retargeting run.

    The defaults are an 8x8 mesh and loss weights 1 / 0.1 / 0.01.
    """

    rows: int = 8
    cols: int = 8
    weights: LossWeights = field(default_factory=LossWeights)
    scale_s: float | None = None
    normalize_losses: bool = False
    squared_geometric: bool = False
    working_long_side: int = 224
    enlarge_mode: str = "invert"
    box_mode: str = "hull8"
    optim: OptimConfig = field(default_factory=OptimConfig)

    def to_json(self) -> dict:
        return asdict(self)


_NUMBER = {"type": "number"}
_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "rows": {"type": "integer", "minimum": 2},
        "cols": {"type": "integer", "minimum": 2},
        "weights": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number", "minimum": 0} for k in ("lambda_o", "lambda_g", "lambda_b")},
        },
        "scale_s": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "normalize_losses": {"type": "boolean"},
        "squared_geometric": {"type": "boolean"},
        "working_long_side": {"type": "integer", "minimum": 8},
        "enlarge_mode": {"enum": ["invert", "direct"]},
        "box_mode": {"enum": ["hull8", "corners"]},
        "optim": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "max_iters": {"type": "integer", "minimum": 1},
                "tolerance": {"type": "number", "minimum": 0},
                "fd_step": {"type": "number", "exclusiveMinimum": 0},
                "adam_beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "adam_beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "adam_eps": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer"},
                "window": {"type": "integer", "minimum": 1},
            },
        },
    },
}

_MESH_SCHEMA = {
    "type": "object",
    "required": ["rows", "cols", "width", "height", "vertices"],
    "properties": {
        "rows": {"type": "integer", "minimum": 1},
        "cols": {"type": "integer", "minimum": 1},
        "width": {"type": "number", "exclusiveMinimum": 0},
        "height": {"type": "number", "exclusiveMinimum": 0},
        "vertices": {
            "type": "array",
            "items": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
        },
    },
}


def _validate(data, schema, what):
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{what}: {path}: {exc.message}") from None


def dump_json(data) -> str:
    return json.dumps(data, indent=2, allow_nan=False) + "\n"


def _read_json(path, what):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def config_from_json(data) -> JobConfig:
    _validate(data, _CONFIG_SCHEMA, "config")
    base = JobConfig()
    kwargs = {k: v for k, v in data.items() if k not in ("weights", "optim")}
    if "weights" in data:
        kwargs["weights"] = replace(base.weights, **data["weights"])
    if "optim" in data:
        kwargs["optim"] = replace(base.optim, **data["optim"])
    return replace(base, **kwargs)


def load_config(path) -> JobConfig:
    """Read a JSON job config; missing fields take the defaults."""
    return config_from_json(_read_json(path, "config"))


def save_config(config: JobConfig, path) -> None:
    Path(path).write_text(dump_json(config.to_json()))


def mesh_to_json(mesh: Mesh) -> dict:
    return {
        "rows": mesh.rows,
        "cols": mesh.cols,
        "width": mesh.width,
        "height": mesh.height,
        "vertices": [[float(x), float(y)] for x, y in mesh.vertices.reshape(-1, 2)],
    }


def mesh_from_json(data) -> Mesh:
    _validate(data, _MESH_SCHEMA, "mesh")
    rows, cols = data["rows"], data["cols"]
    verts = np.array(data["vertices"], dtype=np.float64)
    if verts.shape != ((rows + 1) * (cols + 1), 2):
        raise ConfigError(f"mesh: vertices: expected {(rows + 1) * (cols + 1)} entries, got {len(verts)}")
    return Mesh(rows, cols, float(data["width"]), float(data["height"]), verts.reshape(rows + 1, cols + 1, 2))


def save_mesh(mesh: Mesh, path) -> None:
    Path(path).write_text(dump_json(mesh_to_json(mesh)))


def load_mesh(path) -> Mesh:
    return mesh_from_json(_read_json(path, "mesh"))


def save_report(report, path) -> None:
    Path(path).write_text(dump_json(report.to_json()))


@dataclass
class BoxFile:
    image: str | None
    boxes: list


def read_box_file(path, image_size=None) -> BoxFile:
    """Parse a box file, dropping invalid boxes with a warning.

    ``image_size`` (width, height) enables clipping and the large-box
    warning; without it the size is read from the referenced image if that
    file exists.
    """
    path = Path(path)
    data = _read_json(path, "box file")
    if not isinstance(data, dict) or not isinstance(data.get("boxes"), list):
        raise BoxFileError(f"{path}: expected an object with a 'boxes' list")
    image = data.get("image")
    if image_size is None and image:
        img_path = Path(image) if Path(image).is_absolute() else path.parent / image
        if img_path.exists():
            with Image.open(img_path) as im:
                image_size = im.size
    boxes = []
    for k, raw in enumerate(data["boxes"]):
        where = f"{path}: boxes[{k}]"
        if not isinstance(raw, dict):
            raise BoxFileError(f"{where}: expected an object")
        try:
            coords = [float(raw[key]) for key in ("x0", "y0", "x1", "y1")]
        except KeyError as exc:
            raise BoxFileError(f"{where}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError):
            raise BoxFileError(f"{where}: coordinates must be numbers") from None
        box_id = str(raw.get("id", k))
        try:
            box = ObjectBox(*coords, id=box_id)
        except ValueError as exc:
            logger.warning("%s: rejected: %s", where, exc)
            continue
        if image_size is not None:
            w, h = image_size
            clipped = box.clipped(w, h)
            if clipped is None:
                logger.warning("%s: rejected: box lies outside the %dx%d image", where, w, h)
                continue
            if clipped != box:
                logger.warning("%s: clipped to the %dx%d image", where, w, h)
                box = clipped
            if box.area > LARGE_BOX_FRACTION * w * h:
                logger.warning(
                    "%s: box covers %.0f%% of the image; training data excluded boxes over half the image",
                    where, 100 * box.area / (w * h),
                )
        boxes.append(box)
    return BoxFile(image, boxes)


def load_boxes(path, image_size=None) -> list:
    return read_box_file(path, image_size).boxes


def save_boxes(boxes, path, image: str | None = None) -> None:
    data = {
        "image": image,
        "boxes": [{"id": b.id, "x0": float(b.x0), "y0": float(b.y0), "x1": float(b.x1), "y1": float(b.y1)}
                  for b in boxes],
    }
    Path(path).write_text(dump_json(data))


def load_image(path) -> np.ndarray:
    """Read PNG/JPEG into a float ``(h, w, 1|3)`` array scaled by 1/255."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "F", "1"):
            im = im.convert("L")
        elif im.mode != "RGB":
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def to_uint8(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    return np.clip(np.floor(arr * 255.0 + 0.5), 0, 255).astype(np.uint8)


def save_image(img, path) -> None:
    """Write an 8-bit PNG."""
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def parse_size(text: str) -> tuple[int, int]:
    """``"WxH"`` -> ``(W, H)``."""
    try:
        w, h = text.lower().split("x")
        size = int(w), int(h)
    except ValueError:
        raise ValueError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    if min(size) <= 0 or not all(math.isfinite(v) for v in size):
        raise ValueError(f"size must be positive, got {text!r}")
    return size


def config_fields() -> list[str]:
    return [f.name for f in fields(JobConfig)]
