"""Debiasing augmentations and the standard contrastive view pipeline.

Both debiasing transforms run on the full image before the standard view
augmentations. Object-aware cropping restricts a positive pair to a single
detected object box (the box is chosen once per pair, never per view);
background mixup blends the image with a tiled background-only donor,
weighted by the recipient's saliency map.

All randomness comes through an explicit numpy Generator, so the functions
are stateless and data-loading workers can run them concurrently with
independent streams.
"""

from dataclasses import dataclass
import math

import numpy as np
import torch
import torchvision.transforms.functional as TF

from .core import BoundingBox, elementwise_blend
from .postprocess import binarize, largest_background_rectangle, tile_background


@dataclass(frozen=True)
class AugmentationConfig:
    view_size: int = 64
    crop_scale_min: float = 0.08
    crop_scale_max: float = 1.0
    aspect_range: tuple = (3.0 / 4.0, 4.0 / 3.0)
    flip_prob: float = 0.5
    jitter_strength: tuple = (0.4, 0.4, 0.4, 0.1)
    jitter_prob: float = 0.8
    grayscale_prob: float = 0.2
    blur_kernel: int = 23
    blur_sigma: tuple = (0.1, 2.0)
    blur_prob: float = 0.5
    p_mix: float = 0.0
    hard_mix: bool = False
    mix_threshold: float = 0.2

    def __post_init__(self):
        for name in ("flip_prob", "jitter_prob", "grayscale_prob", "blur_prob", "p_mix"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 < self.crop_scale_min <= 1.0:
            raise ValueError("crop_scale_min must lie in (0, 1]")

    def effective_blur_kernel(self) -> int:
        # the reference kernel of 23 assumes ~224px views; shrink it
        # proportionally for small desk-scale views, keeping it odd
        if self.view_size >= 96:
            return self.blur_kernel
        k = max(3, round(self.blur_kernel * self.view_size / 224))
        return k if k % 2 == 1 else k + 1


def object_aware_crop(image: np.ndarray, boxes: list[BoundingBox], rng: np.random.Generator) -> np.ndarray:
    """Crop to one uniformly chosen box; with no boxes the image passes through."""
    if len(boxes) == 0:
        return image
    box = boxes[int(rng.integers(len(boxes)))]
    return box.crop(image)


def background_mixup(x1: np.ndarray, cam1: np.ndarray, bg: np.ndarray) -> np.ndarray:
    """Blend foreground of x1 (weighted by its saliency) over a background image."""
    return elementwise_blend(x1, cam1, bg)


def make_background_only(donor: np.ndarray, donor_cam: np.ndarray, threshold: float = 0.2) -> np.ndarray:
    """Tile the largest all-background rectangle of the donor over a full canvas."""
    mask = binarize(donor_cam, threshold)
    patch = largest_background_rectangle(mask)
    return tile_background(donor, patch)


def maybe_mix(
    view: np.ndarray,
    cam: np.ndarray,
    bg_pool,
    p_mix: float,
    rng: np.random.Generator,
    hard: bool = False,
    threshold: float = 0.2,
) -> np.ndarray:
    """With probability p_mix, background-mix the view with a random donor.

    `bg_pool` holds (image, saliency) donor pairs; the background-only image
    is built on the fly. A donor whose binarized map has no background pixel
    is skipped silently for that draw. With `hard` the recipient map is
    binarized first, which turns the blend into copy-and-paste.
    """
    if not 0.0 <= p_mix <= 1.0:
        raise ValueError(f"p_mix must lie in [0, 1], got {p_mix}")
    if p_mix > 0 and len(bg_pool) == 0:
        raise ValueError("background donor pool is empty")
    if p_mix == 0 or rng.random() >= p_mix:
        return view
    donor, donor_cam = bg_pool[int(rng.integers(len(bg_pool)))]
    try:
        bg = make_background_only(donor, donor_cam, threshold)
    except ValueError:
        return view
    weight = binarize(cam, threshold).astype(np.float32) if hard else cam
    return background_mixup(view, weight, bg)


def _sample_crop(height: int, width: int, cfg: AugmentationConfig, rng: np.random.Generator):
    area = height * width
    log_ratio = (math.log(cfg.aspect_range[0]), math.log(cfg.aspect_range[1]))
    for _ in range(10):
        target_area = area * rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max)
        aspect = math.exp(rng.uniform(*log_ratio))
        cw = round(math.sqrt(target_area * aspect))
        ch = round(math.sqrt(target_area / aspect))
        if 0 < cw <= width and 0 < ch <= height:
            top = int(rng.integers(0, height - ch + 1))
            left = int(rng.integers(0, width - cw + 1))
            return top, left, ch, cw
    in_ratio = width / height
    if in_ratio < cfg.aspect_range[0]:
        cw, ch = width, min(height, round(width / cfg.aspect_range[0]))
    elif in_ratio > cfg.aspect_range[1]:
        ch, cw = height, min(width, round(height * cfg.aspect_range[1]))
    else:
        ch, cw = height, width
    return (height - ch) // 2, (width - cw) // 2, ch, cw


def augment_view(image: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """One crop/flip/jitter/grayscale/blur draw, resized to the view size."""
    img = torch.from_numpy(np.ascontiguousarray(np.asarray(image, dtype=np.float32).transpose(2, 0, 1)))
    top, left, ch, cw = _sample_crop(img.shape[1], img.shape[2], cfg, rng)
    img = TF.resized_crop(img, top, left, ch, cw, [cfg.view_size, cfg.view_size], antialias=True)
    if rng.random() < cfg.flip_prob:
        img = TF.hflip(img)
    if rng.random() < cfg.jitter_prob:
        b, c, s, h = cfg.jitter_strength
        factors = (
            lambda t: TF.adjust_brightness(t, rng.uniform(max(0.0, 1 - b), 1 + b)),
            lambda t: TF.adjust_contrast(t, rng.uniform(max(0.0, 1 - c), 1 + c)),
            lambda t: TF.adjust_saturation(t, rng.uniform(max(0.0, 1 - s), 1 + s)),
            lambda t: TF.adjust_hue(t, rng.uniform(-h, h)),
        )
        for idx in rng.permutation(4):
            img = factors[idx](img)
    if rng.random() < cfg.grayscale_prob:
        img = TF.rgb_to_grayscale(img, num_output_channels=3)
    if rng.random() < cfg.blur_prob:
        k = cfg.effective_blur_kernel()
        sigma = rng.uniform(*cfg.blur_sigma)
        img = TF.gaussian_blur(img, [k, k], [sigma, sigma])
    return np.clip(img.numpy().transpose(1, 2, 0), 0.0, 1.0)


def standard_views(image: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator):
    """Two independently augmented views: crop, flip, jitter, grayscale, blur."""
    return augment_view(image, cfg, rng), augment_view(image, cfg, rng)
