"""Contrastive class activation maps, single-pass and iteratively refined.

The saliency of an image is the weighted sum of its penultimate spatial
activations, where each channel weight is the rectified spatial mean of the
gradient of a contrastive score that uses the image itself as positive and a
batch of other images as negatives. Rectifying the channel weights discards
the negative signals contributed by similar objects in the negative batch;
an ablation switch disables it.

The iterative variant repeatedly soft-masks the image with the reverse of
the aggregated map, re-scores the masked image against the original one as
positive (so undetected objects keep contributing) plus all previous masked
batches as negatives, and aggregates the per-iteration maps pixelwise by max.

Order of CAM post-processing is fixed: weighted sum, bilinear upsample to
the image size, ReLU, then per-image min-max normalization.
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
import torch

from .encoder import EncoderModel, images_to_tensor
from .scores import ScoreConfig, batch_contrastive_scores


@dataclass(frozen=True)
class CamConfig:
    tau: float = 0.2
    negative_signal_removal: bool = True
    expanded: bool = False

    def score_config(self) -> ScoreConfig:
        return ScoreConfig(tau=self.tau)


def cam_from_score(
    activations: torch.Tensor,
    score: torch.Tensor,
    target_size: tuple[int, int],
    negative_signal_removal: bool = True,
) -> np.ndarray:
    """Gradient-weighted activation map for a scalar score.

    `activations` is (K, h, w) for one sample or (B, K, h, w) for a batch
    whose per-sample scores were summed into `score`; the result matches
    (target H, target W) or (B, target H, target W) accordingly.
    """
    grad = torch.autograd.grad(score, activations, retain_graph=False)[0]
    single = activations.dim() == 3
    acts = activations.detach()
    if single:
        acts, grad = acts[None], grad[None]
    cam = _cam_batch(acts, grad, target_size, negative_signal_removal)
    out = cam.numpy()
    return out[0] if single else out


def _cam_tensor(activations: torch.Tensor, score: torch.Tensor, target_size, negative_signal_removal: bool) -> torch.Tensor:
    grad = torch.autograd.grad(score, activations, retain_graph=False)[0]
    return _cam_batch(activations.detach(), grad, target_size, negative_signal_removal)


def _cam_batch(
    acts: torch.Tensor,
    grad: torch.Tensor,
    target_size: tuple[int, int],
    negative_signal_removal: bool,
) -> torch.Tensor:
    if not torch.isfinite(grad).all():
        raise ValueError("non-finite gradients in CAM computation")
    weights = grad.mean(dim=(2, 3), keepdim=True)
    if negative_signal_removal:
        weights = weights.clamp_min(0)
    cam = (weights * acts).sum(dim=1, keepdim=True).detach()
    cam = torch.nn.functional.interpolate(cam, size=target_size, mode="bilinear", align_corners=False)
    cam = cam.clamp_min(0).squeeze(1)
    flat = cam.flatten(1)
    lo = flat.min(dim=1).values[:, None, None]
    hi = flat.max(dim=1).values[:, None, None]
    span = hi - lo
    return torch.where(span > 0, (cam - lo) / torch.where(span > 0, span, torch.ones_like(span)), torch.zeros_like(cam))


def _query_forward(model: EncoderModel, images: torch.Tensor, expanded: bool):
    """Spatial features as a grad-enabled leaf, plus the online projection."""
    with torch.no_grad():
        acts = model.backbone(images, expanded=expanded)
    acts.requires_grad_(True)
    z = model.project(acts.mean(dim=(2, 3)))
    return acts, z


def contracam(
    image: np.ndarray,
    negative_batch: np.ndarray,
    model: EncoderModel,
    cfg: CamConfig = CamConfig(),
) -> np.ndarray:
    """Single-pass saliency of `image` contrasted against `negative_batch`."""
    negatives = np.asarray(negative_batch, dtype=np.float32)
    if negatives.ndim == 3:
        negatives = negatives[None]
    if negatives.shape[0] == 0:
        raise ValueError("negative batch must not be empty")
    model.eval()
    x = images_to_tensor(image)
    with torch.no_grad():
        neg_acts = model.backbone(images_to_tensor(negatives), expanded=cfg.expanded)
        neg_z = model.project(neg_acts.mean(dim=(2, 3)))
    acts, z = _query_forward(model, x, cfg.expanded)
    scores = batch_contrastive_scores(z, z.detach(), [neg_z], cfg.score_config())
    return _cam_tensor(acts, scores.sum(), image.shape[:2], cfg.negative_signal_removal).numpy()[0]


def iterative_contracam(
    images: np.ndarray,
    model: EncoderModel,
    iterations: int,
    mask_color=0.0,
    cfg: CamConfig = CamConfig(),
    iteration_hook=None,
) -> np.ndarray:
    """Iteratively refined saliency for a batch of mutually-negative images.

    Every image in the batch serves as a negative for the others (never for
    itself). Each iteration appends the batch of masked-image embeddings to
    the negative banks, keeps the original image as positive, and aggregates
    maps pixelwise by max. Returns the (B, H, W) aggregated maps after
    `iterations` rounds. `iteration_hook(t, cams, aggregated, masked_next)`
    observes each round (masked_next is None on the last one).
    """
    if iterations < 1:
        raise ValueError(f"iteration count must be >= 1, got {iterations}")
    batch = np.asarray(images, dtype=np.float32)
    if batch.ndim == 3:
        batch = batch[None]
    if batch.shape[0] < 2:
        raise ValueError("iterative refinement needs a batch of at least 2 images")
    model.eval()
    x = images_to_tensor(batch)
    color = torch.as_tensor(mask_color, dtype=torch.float32).reshape(1, -1, 1, 1)
    if color.shape[1] not in (1, 3):
        raise ValueError("mask color must be a scalar or one value per channel")
    size = batch.shape[1:3]

    masked = x
    key = None
    banks: list[torch.Tensor] = []
    aggregated = None
    for t in range(iterations):
        acts, z = _query_forward(model, masked, cfg.expanded)
        if t == 0:
            key = z.detach()
        banks.append(z.detach())
        scores = batch_contrastive_scores(z, key, banks, cfg.score_config(), exclude_own_index=True)
        cams = _cam_tensor(acts, scores.sum(), size, cfg.negative_signal_removal)
        aggregated = cams if aggregated is None else torch.maximum(aggregated, cams)
        masked = None
        if t + 1 < iterations:
            w = aggregated[:, None]
            masked = x * (1.0 - w) + color * w
        if iteration_hook is not None:
            iteration_hook(
                t,
                cams.numpy(),
                aggregated.numpy(),
                None if masked is None else masked.permute(0, 2, 3, 1).numpy(),
            )
    return aggregated.numpy()


def save_saliency(path, cam: np.ndarray):
    """Persist a [0, 1] map as an 8-bit single-channel image file."""
    arr = np.asarray(cam, dtype=np.float32)
    PILImage.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L").save(path, format="PNG")


def load_saliency(path) -> np.ndarray:
    with PILImage.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float32) / 255.0
