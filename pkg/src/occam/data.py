"""Synthetic shapes-on-textures datasets and manifest-based ingestion.

Generated images place brightly colored shapes (circle, triangle,
rectangle) over muted procedural textures, with pixel-exact ground-truth
masks and boxes. Two bias knobs make desk-scale analogues of scene bias:

* ``bias="background"``: single objects whose class co-occurs with a
  specific texture family at the configured rate
* ``bias="contextual"``: at the configured rate, a correlated scene with
  the first two shape classes together over texture family 0

Any folder-per-file dataset with the manifest layout loads the same way,
so externally produced data can reuse the pipeline.
"""

import colorsys
from dataclasses import dataclass, asdict, field
import json
import math
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .core import BoundingBox

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

SHAPE_CLASSES = ("circle", "triangle", "rectangle")


@dataclass(frozen=True)
class SyntheticSpec:
    n_images: int = 200
    image_size: int = 64
    shape_classes: tuple = SHAPE_CLASSES
    textures: int = 4
    objects_min: int = 1
    objects_max: int = 1
    bias: str = "none"  # none | background | contextual
    co_occurrence: float = 0.9
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 1:
            raise ValueError("need at least one image")
        if not 1 <= self.objects_min <= self.objects_max:
            raise ValueError("invalid objects-per-image range")
        if self.bias not in ("none", "background", "contextual"):
            raise ValueError(f"unknown bias mode {self.bias!r}")
        if not 0.0 <= self.co_occurrence <= 1.0:
            raise ValueError("co-occurrence rate must lie in [0, 1]")
        unknown = set(self.shape_classes) - set(SHAPE_CLASSES)
        if unknown:
            raise ValueError(f"unknown shape classes {sorted(unknown)}")
        if self.bias == "contextual" and len(self.shape_classes) < 2:
            raise ValueError("contextual bias needs at least two shape classes")


def save_image(path, image: np.ndarray):
    """Write a float [0, 1] image as 8-bit RGB."""
    arr = np.round(np.asarray(image, dtype=np.float32) * 255.0).astype(np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image(path) -> np.ndarray:
    with PILImage.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def save_mask(path, mask: np.ndarray):
    PILImage.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    with PILImage.open(path) as img:
        return (np.asarray(img.convert("L")) >= 128).astype(np.uint8)


# --- rasterizers (pixel centers at (i+0.5, j+0.5)) ---


def _pixel_centers(size: int):
    yy, xx = np.mgrid[0:size, 0:size]
    return yy + 0.5, xx + 0.5


def rasterize_circle(size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = _pixel_centers(size)
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2).astype(np.uint8)


def circle_area(radius: float) -> float:
    return math.pi * radius**2


def rasterize_triangle(size: int, vertices: np.ndarray) -> np.ndarray:
    yy, xx = _pixel_centers(size)
    orientation = _triangle_orientation(vertices)
    inside = np.ones((size, size), dtype=bool)
    for i in range(3):
        y0, x0 = vertices[i]
        y1, x1 = vertices[(i + 1) % 3]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        inside &= cross >= 0 if orientation > 0 else cross <= 0
    return inside.astype(np.uint8)


def _triangle_orientation(vertices: np.ndarray) -> float:
    (y0, x0), (y1, x1), (y2, x2) = vertices
    return (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)


def triangle_area(vertices: np.ndarray) -> float:
    return abs(_triangle_orientation(vertices)) / 2.0


def rasterize_rectangle(size: int, top: int, left: int, bottom: int, right: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[top:bottom, left:right] = 1
    return mask


# --- textures and scene assembly ---


def _muted_color(rng) -> np.ndarray:
    rgb = colorsys.hsv_to_rgb(rng.uniform(0, 1), rng.uniform(0.1, 0.4), rng.uniform(0.25, 0.55))
    return np.asarray(rgb, dtype=np.float32)


def _bright_color(rng) -> np.ndarray:
    rgb = colorsys.hsv_to_rgb(rng.uniform(0, 1), rng.uniform(0.7, 1.0), rng.uniform(0.8, 1.0))
    return np.asarray(rgb, dtype=np.float32)


def render_texture(family: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Muted procedural background from one of four base families."""
    c1, c2 = _muted_color(rng), _muted_color(rng)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    kind = family % 4
    if kind == 0:  # stripes
        phi = rng.uniform(0, math.pi)
        freq = rng.uniform(0.15, 0.45)
        w = 0.5 + 0.5 * np.sin(2 * math.pi * freq * (xx * math.cos(phi) + yy * math.sin(phi)))
    elif kind == 1:  # checkerboard
        cell = int(rng.integers(5, 11))
        w = ((yy // cell + xx // cell) % 2).astype(np.float32)
    elif kind == 2:  # smooth blobs
        low = rng.random((8, 8)).astype(np.float32)
        w = ndimage.zoom(low, size / 8, order=1, mode="nearest", grid_mode=True)[:size, :size]
        w = (w - w.min()) / max(w.max() - w.min(), 1e-6)
    else:  # linear gradient
        phi = rng.uniform(0, 2 * math.pi)
        proj = xx * math.cos(phi) + yy * math.sin(phi)
        w = (proj - proj.min()) / max(proj.max() - proj.min(), 1e-6)
    return np.clip(w[:, :, None] * c1 + (1.0 - w[:, :, None]) * c2, 0.0, 1.0).astype(np.float32)


GT_AREA_TOLERANCE = 0.015  # relative tolerance of emitted shapes vs analytic area
GT_AREA_FLOOR = 2.0  # absolute pixel slack so small shapes stay feasible


def _sample_shape_once(shape: str, size: int, rng: np.random.Generator, scale: float):
    scale = scale * size / 64.0  # shape sizes are calibrated for 64px canvases
    if shape == "circle":
        r = rng.uniform(9.0, 14.0) * scale
        pad = r + 1.5
        if r < 3.0 or size - pad <= pad:
            raise ValueError(f"a circle of radius {r:.1f} cannot fit usefully in {size}px")
        cy, cx = rng.uniform(pad, size - pad, size=2)
        return rasterize_circle(size, cy, cx, r), circle_area(r)
    if shape == "triangle":
        radius = rng.uniform(11.0, 16.0) * scale
        pad = radius + 1.5
        if radius < 4.0 or size - pad <= pad:
            raise ValueError(f"a triangle of circumradius {radius:.1f} cannot fit usefully in {size}px")
        cy, cx = rng.uniform(pad, size - pad, size=2)
        theta = rng.uniform(0, 2 * math.pi)
        angles = theta + np.asarray([0.0, 2 * math.pi / 3, 4 * math.pi / 3]) + rng.uniform(-0.15, 0.15, size=3)
        verts = np.stack([cy + radius * np.sin(angles), cx + radius * np.cos(angles)], axis=1)
        return rasterize_triangle(size, verts), triangle_area(verts)
    if shape == "rectangle":
        lo = max(4, int(14 * scale))
        hi = max(lo + 2, int(25 * scale))
        w = int(rng.integers(lo, hi))
        h = int(rng.integers(lo, hi))
        if lo < 4 or w + 2 >= size or h + 2 >= size:
            raise ValueError(f"a {h}x{w} rectangle cannot fit usefully in {size}px")
        top = int(rng.integers(1, size - h))
        left = int(rng.integers(1, size - w))
        return rasterize_rectangle(size, top, left, top + h, left + w), float(w * h)
    raise ValueError(f"unknown shape {shape!r}")


def _place_shape(shape: str, size: int, rng: np.random.Generator, scale: float = 1.0):
    """Rasterize one randomly sized/positioned shape fully inside the canvas.

    Returns (mask, analytic area). Draws whose pixel count strays from the
    analytic area by more than the tolerance (an unlucky grid alignment)
    are resampled, so the emitted ground truth is faithful by construction.
    """
    for _ in range(100):
        mask, area = _sample_shape_once(shape, size, rng, scale)
        if abs(int(mask.sum()) - area) <= max(GT_AREA_TOLERANCE * area, GT_AREA_FLOOR):
            return mask, area
    raise ValueError(f"could not rasterize a faithful {shape} in {size}px")


def _tight_box(mask: np.ndarray) -> BoundingBox:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return BoundingBox(left=int(cols[0]), top=int(rows[0]), right=int(cols[-1]) + 1, bottom=int(rows[-1]) + 1)


def _compose_scene(spec: SyntheticSpec, shapes: list[str], texture_family: int, rng: np.random.Generator):
    size = spec.image_size
    image = render_texture(texture_family, size, rng)
    scene_mask = np.zeros((size, size), dtype=np.uint8)
    boxes = []
    areas = []
    scale = 1.0 if len(shapes) == 1 else 0.75
    for shape in shapes:
        for attempt in range(200):
            mask, area = _place_shape(shape, size, rng, scale=scale)
            if not (mask & scene_mask).any():
                break
        else:
            raise ValueError(f"could not place {len(shapes)} non-overlapping shapes in {size}px")
        color = _bright_color(rng)
        image = np.where(mask[:, :, None] > 0, color[None, None, :], image)
        scene_mask |= mask
        boxes.append(_tight_box(mask))
        areas.append(area)
    return image.astype(np.float32), scene_mask, boxes, areas


def _draw_scene_plan(spec: SyntheticSpec, rng: np.random.Generator):
    """Pick shape classes and a texture family according to the bias mode."""
    classes = list(spec.shape_classes)
    n_objects = int(rng.integers(spec.objects_min, spec.objects_max + 1))
    if spec.bias == "background":
        label = int(rng.integers(len(classes)))
        if rng.random() < spec.co_occurrence:
            texture = label % spec.textures
        else:
            texture = int(rng.integers(spec.textures))
        return [classes[label]] + [classes[int(rng.integers(len(classes)))] for _ in range(n_objects - 1)], texture, label
    if spec.bias == "contextual" and rng.random() < spec.co_occurrence:
        return [classes[0], classes[1]], 0, 0
    label = int(rng.integers(len(classes)))
    shapes = [classes[label]] + [classes[int(rng.integers(len(classes)))] for _ in range(n_objects - 1)]
    return shapes, int(rng.integers(spec.textures)), label


def generate_synthetic(spec: SyntheticSpec, out_dir) -> "DatasetManifest":
    """Render the dataset to disk and return its manifest."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    entries = []
    n_test = int(round(spec.test_fraction * spec.n_images))
    test_ids = set(rng.choice(spec.n_images, size=n_test, replace=False).tolist())
    for i in range(spec.n_images):
        shapes, texture, label = _draw_scene_plan(spec, rng)
        image, mask, boxes, areas = _compose_scene(spec, shapes, texture, rng)
        stem = f"{i:05d}"
        save_image(out / "images" / f"{stem}.png", image)
        save_mask(out / "masks" / f"{stem}.png", mask)
        entries.append(
            {
                "image": f"images/{stem}.png",
                "gt_mask": f"masks/{stem}.png",
                "label": label,
                "gt_boxes": [list(b.astuple()) for b in boxes],
                "gt_areas": areas,
                "split": "test" if i in test_ids else "train",
            }
        )
    manifest = {
        "format": "occam-manifest",
        "version": MANIFEST_VERSION,
        "classes": list(spec.shape_classes),
        "image_size": spec.image_size,
        "spec": asdict(spec),
        "entries": entries,
    }
    with open(out / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return DatasetManifest.load(out / MANIFEST_NAME)


@dataclass
class DatasetManifest:
    root: Path
    classes: list
    image_size: int
    entries: list = field(default_factory=list)
    spec: dict | None = None

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        with open(path) as fh:
            raw = json.load(fh)
        if raw.get("format") != "occam-manifest":
            raise ValueError(f"{path} is not a dataset manifest")
        manifest = cls(
            root=path.parent,
            classes=raw["classes"],
            image_size=raw["image_size"],
            entries=raw["entries"],
            spec=raw.get("spec"),
        )
        manifest._validate()
        return manifest

    def _validate(self):
        n_classes = len(self.classes)
        for entry in self.entries:
            for key in ("image", "gt_mask"):
                rel = entry.get(key)
                if rel is not None and not (self.root / rel).exists():
                    raise FileNotFoundError(f"manifest references missing file {rel}")
            label = entry.get("label")
            if label is not None and not (isinstance(label, int) and 0 <= label < n_classes):
                raise ValueError(f"label {label!r} is not an index into the {n_classes} declared classes")

    def select(self, split: str | None = None) -> list:
        if split is None:
            return list(self.entries)
        return [e for e in self.entries if e.get("split") == split]

    def stems(self, split: str | None = None) -> list[str]:
        return [Path(e["image"]).stem for e in self.select(split)]

    def load_images(self, split: str | None = None) -> np.ndarray:
        return np.stack([load_image(self.root / e["image"]) for e in self.select(split)])

    def labels(self, split: str | None = None) -> np.ndarray:
        return np.asarray([e["label"] for e in self.select(split)], dtype=np.int64)

    def load_gt_masks(self, split: str | None = None) -> np.ndarray:
        return np.stack([load_mask(self.root / e["gt_mask"]) for e in self.select(split)])

    def gt_boxes(self, split: str | None = None) -> list[list[BoundingBox]]:
        return [[BoundingBox(*map(int, b)) for b in e.get("gt_boxes", [])] for e in self.select(split)]
