"""Turn saliency maps into binary masks, boxes, and background-only images."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import BoundingBox, as_mask, as_saliency


@dataclass(frozen=True)
class BoxExtractionConfig:
    threshold: float = 0.2
    margin_frac: float = 0.2
    min_area_frac: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.margin_frac < 0:
            raise ValueError("margin fraction must be nonnegative")
        if not 0.0 <= self.min_area_frac < 1.0:
            raise ValueError("minimum area fraction must lie in [0, 1)")


def binarize(saliency: np.ndarray, threshold: float) -> np.ndarray:
    """Threshold a saliency map; values >= threshold become 1."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return (as_saliency(saliency) >= threshold).astype(np.uint8)


def extract_boxes(mask: np.ndarray, cfg: BoxExtractionConfig = BoxExtractionConfig()) -> list[BoundingBox]:
    """One margin-expanded box per 4-connected component, largest first.

    Components whose pixel count falls below min_area_frac of the image are
    dropped before the margin is applied. Ordering is by descending
    component pixel count, ties by (top, left) of the tight box.
    """
    mask = as_mask(mask)
    height, width = mask.shape
    labels, count = ndimage.label(mask)
    if count == 0:
        return []
    min_pixels = cfg.min_area_frac * mask.size
    slices = ndimage.find_objects(labels)
    areas = ndimage.sum_labels(mask, labels, index=np.arange(1, count + 1))
    keyed = []
    for area, sl in zip(areas, slices):
        if area < min_pixels:
            continue
        tight = BoundingBox(left=sl[1].start, top=sl[0].start, right=sl[1].stop, bottom=sl[0].stop)
        keyed.append((-area, tight.top, tight.left, tight))
    keyed.sort(key=lambda item: item[:3])
    return [tight.expand(cfg.margin_frac, height, width) for *_, tight in keyed]


def largest_background_rectangle(mask: np.ndarray) -> BoundingBox:
    """Maximum-area axis-aligned rectangle of zeros, via the histogram-stack scan.

    Ties go to the smallest top, then smallest left, then the widest shape.
    """
    zeros = as_mask(mask) == 0
    if not zeros.any():
        raise ValueError("mask has no zero pixels, no background available")
    height, width = zeros.shape
    heights = np.zeros(width, dtype=np.int64)
    best = None
    for row in range(height):
        heights = np.where(zeros[row], heights + 1, 0)
        stack: list[int] = []
        for col in range(width + 1):
            bar = heights[col] if col < width else 0
            while stack and heights[stack[-1]] >= bar:
                h = int(heights[stack.pop()])
                if h == 0:
                    continue
                left = stack[-1] + 1 if stack else 0
                key = (-h * (col - left), row - h + 1, left, -(col - left))
                if best is None or key < best:
                    best = key
            stack.append(col)
    area, top, left, neg_w = best
    w = -neg_w
    return BoundingBox(left=left, top=top, right=left + w, bottom=top + (-area) // w)


def tile_background(image: np.ndarray, patch: BoundingBox) -> np.ndarray:
    """Fill an image-sized canvas by repeating the patch from the top-left."""
    height, width = image.shape[:2]
    patch.check_within(height, width)
    tile = patch.crop(image)
    reps_y = -(-height // patch.height)
    reps_x = -(-width // patch.width)
    tiled = np.tile(tile, (reps_y, reps_x, 1) if image.ndim == 3 else (reps_y, reps_x))
    return tiled[:height, :width]


_REFINERS = {}


def register_refiner(name: str, fn):
    """Register a mask refiner callable fn(saliency, image, threshold) -> mask."""
    _REFINERS[name] = fn


def refine_mask(saliency: np.ndarray, image: np.ndarray, refiner: str = "none", threshold: float = 0.2) -> np.ndarray:
    """Refine a saliency map into a binary mask via a registered refiner.

    The built-in "none" refiner is plain thresholding; heavier refiners
    (e.g. a dense CRF) plug in through register_refiner.
    """
    if refiner not in _REFINERS:
        raise ValueError(f"unknown refiner {refiner!r}; registered: {sorted(_REFINERS)}")
    return as_mask(_REFINERS[refiner](saliency, image, threshold))


register_refiner("none", lambda saliency, image, threshold: binarize(saliency, threshold))
