"""Shared dense-array types and elementwise kernels.

Conventions used across the package:

* images are float arrays of shape (H, W, 3) with values in [0, 1],
  channels last; 8-bit conversion happens only at file I/O boundaries
* saliency maps are float arrays of shape (H, W) with values in [0, 1]
* binary masks are uint8 arrays of shape (H, W) with values in {0, 1}

All values are plain numpy arrays; treat them as immutable after
construction so they can be shared freely across workers.
"""

from dataclasses import dataclass
import math

import numpy as np


def as_image(pixels) -> np.ndarray:
    """Validate and return an (H, W, 3) float image with values in [0, 1]."""
    arr = np.asarray(pixels, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError("image must have height, width >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return arr


def as_saliency(values) -> np.ndarray:
    """Validate and return an (H, W) float saliency map with values in [0, 1]."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"saliency map must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("saliency map contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("saliency values must lie in [0, 1]")
    return arr


def as_mask(values) -> np.ndarray:
    """Validate and return an (H, W) uint8 mask with values in {0, 1}."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("mask values must be exactly 0 or 1")
    return arr.astype(np.uint8)


@dataclass(frozen=True)
class BoundingBox:
    """Integer pixel rectangle, half-open: [left, right) x [top, bottom)."""

    left: int
    top: int
    right: int
    bottom: int

    def __post_init__(self):
        for name in ("left", "top", "right", "bottom"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)):
                raise ValueError(f"box coordinate {name} must be an integer, got {v!r}")
        if not (self.left < self.right and self.top < self.bottom):
            raise ValueError(f"degenerate box {self.astuple()}")
        if self.left < 0 or self.top < 0:
            raise ValueError(f"box {self.astuple()} extends past the origin")

    @property
    def width(self) -> int:
        return self.right - self.left

    @property
    def height(self) -> int:
        return self.bottom - self.top

    @property
    def area(self) -> int:
        return self.width * self.height

    def astuple(self) -> tuple[int, int, int, int]:
        return (self.left, self.top, self.right, self.bottom)

    def check_within(self, height: int, width: int) -> "BoundingBox":
        if self.right > width or self.bottom > height:
            raise ValueError(f"box {self.astuple()} exceeds image of size {height}x{width}")
        return self

    def expand(self, margin_frac: float, height: int, width: int) -> "BoundingBox":
        """Grow by margin_frac of own width/height, rounding outward, clipped to the image."""
        mw = margin_frac * self.width
        mh = margin_frac * self.height
        return BoundingBox(
            left=max(0, math.floor(self.left - mw)),
            top=max(0, math.floor(self.top - mh)),
            right=min(width, math.ceil(self.right + mw)),
            bottom=min(height, math.ceil(self.bottom + mh)),
        )

    def crop(self, image: np.ndarray) -> np.ndarray:
        self.check_within(image.shape[0], image.shape[1])
        return image[self.top : self.bottom, self.left : self.right]


def normalize_map(raw) -> np.ndarray:
    """Affinely rescale a grid to [0, 1].

    A constant grid carries no localization evidence and maps to all
    zeros, so downstream box extraction returns no boxes.
    """
    arr = np.asarray(raw, dtype=np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot normalize a grid with non-finite entries")
    lo = arr.min()
    hi = arr.max()
    if hi == lo:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def elementwise_blend(a: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return w*a + (1-w)*b with the 2-D weight broadcast over channels."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    if a.shape != b.shape:
        raise ValueError(f"blend inputs disagree in shape: {a.shape} vs {b.shape}")
    if w.shape != a.shape[:2]:
        raise ValueError(f"weight shape {w.shape} does not match image plane {a.shape[:2]}")
    if a.ndim == 3:
        w = w[:, :, None]
    return w * a + (1.0 - w) * b
