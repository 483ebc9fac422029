"""Desk-scale MoCo-style and BYOL-style training loops.

The debiased workflow runs in two phases: train a vanilla model, precompute
saliency masks and object boxes with it, then retrain from scratch with one
of the debiasing augmentations driven by those fixed artifacts. Retraining
a second time with masks from an already-debiased checkpoint is just a
matter of pointing the precompute step at that checkpoint.

Randomness is split over dedicated streams (batch order, standard views,
debias decisions) so that a debiased run with the debias branch disabled
at runtime consumes exactly the vanilla stream.
"""

import csv
from dataclasses import dataclass, field, asdict
import json
import math
from pathlib import Path
import time

import numpy as np
import torch

from .augment import AugmentationConfig, augment_view, maybe_mix, object_aware_crop
from .cam import CamConfig, contracam, iterative_contracam, save_saliency
from .core import BoundingBox
from .encoder import EncoderConfig, EncoderModel, images_to_tensor
from .postprocess import BoxExtractionConfig, extract_boxes, refine_mask
from .scores import ScoreConfig, byol_loss, moco_loss

DEBIAS_MODES = ("none", "oa_crop", "bg_mixup", "bg_hardmix")


@dataclass
class TrainConfig:
    method: str = "moco"
    epochs: int = 40
    batch_size: int = 64
    queue_size: int = 1024
    momentum: float = 0.99
    lr: float = 0.03
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    tau: float = 0.2
    seed: int = 0
    debias: str = "none"
    donor_pool_size: int = 64
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)

    def __post_init__(self):
        if self.method not in ("moco", "byol"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.debias not in DEBIAS_MODES:
            raise ValueError(f"unknown debias mode {self.debias!r}")
        if self.method == "moco" and self.queue_size < self.batch_size:
            raise ValueError("queue size must be at least the batch size")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum coefficient must lie in [0, 1]")


class MoCoQueue:
    """Fixed-size FIFO of detached l2-normalized keys."""

    def __init__(self, size: int, dim: int, generator: torch.Generator):
        init = torch.randn(size, dim, generator=generator)
        self.bank = init / init.norm(dim=1, keepdim=True)
        self.ptr = 0

    def enqueue(self, keys: torch.Tensor):
        keys = keys.detach()
        keys = keys / keys.norm(dim=1, keepdim=True)
        n = keys.shape[0]
        size = self.bank.shape[0]
        if n > size:
            raise ValueError("cannot enqueue more keys than the queue holds")
        end = self.ptr + n
        if end <= size:
            self.bank[self.ptr : end] = keys
        else:
            first = size - self.ptr
            self.bank[self.ptr :] = keys[:first]
            self.bank[: end - size] = keys[first:]
        self.ptr = end % size


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def _make_pair(image, idx, cfg: TrainConfig, precomputed, donor_pool, rng_aug, rng_debias, debias_on):
    """Build the two augmented views of one positive pair."""
    base = image
    if debias_on and cfg.debias == "oa_crop":
        base = object_aware_crop(base, precomputed["boxes"][idx], rng_debias)
    if debias_on and cfg.debias in ("bg_mixup", "bg_hardmix"):
        hard = cfg.debias == "bg_hardmix"
        cam = precomputed["cams"][idx]
        a = maybe_mix(base, cam, donor_pool, cfg.augment.p_mix, rng_debias, hard=hard, threshold=cfg.augment.mix_threshold)
        b = maybe_mix(base, cam, donor_pool, cfg.augment.p_mix, rng_debias, hard=hard, threshold=cfg.augment.mix_threshold)
    else:
        a = b = base
    return augment_view(a, cfg.augment, rng_aug), augment_view(b, cfg.augment, rng_aug)


def train(
    config: TrainConfig,
    images: np.ndarray,
    precomputed: dict | None = None,
    log_path=None,
    batch_hook=None,
    debias_override: bool | None = None,
):
    """Train an encoder; returns (model, per-epoch metric rows).

    `images` is an (N, H, W, 3) float array. Debias modes need
    `precomputed`: object boxes per image for oa_crop, saliency maps per
    image for the background mixes. `batch_hook(epoch, step, views_a,
    views_b)` observes the assembled views; `debias_override=False` keeps
    the configured rng streams but skips the debias branch (used to verify
    that runs differ only through the augmentation branch).
    """
    cfg = config
    debias_on = cfg.debias != "none" if debias_override is None else debias_override
    if cfg.debias == "oa_crop" and (precomputed is None or "boxes" not in precomputed):
        raise ValueError("oa_crop needs precomputed boxes")
    if cfg.debias in ("bg_mixup", "bg_hardmix") and (precomputed is None or "cams" not in precomputed):
        raise ValueError(f"{cfg.debias} needs precomputed saliency maps")

    images = np.asarray(images, dtype=np.float32)
    n = images.shape[0]
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    rng_order = np.random.default_rng(cfg.seed + 1)
    rng_aug = np.random.default_rng(cfg.seed + 2)
    rng_debias = np.random.default_rng(cfg.seed + 3)

    enc_cfg = cfg.encoder
    if cfg.method == "byol" and not enc_cfg.use_predictor:
        enc_cfg = EncoderConfig(**{**asdict(enc_cfg), "use_predictor": True})
    model = EncoderModel(enc_cfg)
    model.train()
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.sgd_momentum, weight_decay=cfg.weight_decay)
    queue = None
    if cfg.method == "moco":
        queue = MoCoQueue(cfg.queue_size, enc_cfg.embedding_dim, gen)
        # warm the queue with momentum embeddings of raw images; starting
        # from random vectors makes the first epoch artificially easy and
        # the loss rises as real keys arrive
        with torch.no_grad():
            warm_idx = np.arange(cfg.queue_size) % n
            for start in range(0, cfg.queue_size, cfg.batch_size):
                chunk = warm_idx[start : start + cfg.batch_size]
                queue.enqueue(model.forward_target(images_to_tensor(images[chunk])))
    score_cfg = ScoreConfig(tau=cfg.tau)

    rows = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
        for group in opt.param_groups:
            group["lr"] = lr
        donor_pool = []
        if cfg.debias in ("bg_mixup", "bg_hardmix"):
            chosen = rng_debias.choice(n, size=min(cfg.donor_pool_size, n), replace=False)
            donor_pool = [(images[j], precomputed["cams"][j]) for j in chosen]
        order = rng_order.permutation(n)
        losses = []
        t0 = time.monotonic()
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            batch_idx = order[start : start + cfg.batch_size]
            if batch_idx.size < 2:
                continue
            pairs = [
                _make_pair(images[i], i, cfg, precomputed, donor_pool, rng_aug, rng_debias, debias_on)
                for i in batch_idx
            ]
            views_a = np.stack([p[0] for p in pairs])
            views_b = np.stack([p[1] for p in pairs])
            if batch_hook is not None:
                batch_hook(epoch, step, views_a, views_b)
            xa = images_to_tensor(views_a)
            xb = images_to_tensor(views_b)

            model.momentum_update(cfg.momentum)
            if cfg.method == "moco":
                _, q = model.forward_spatial(xa)
                k = model.forward_target(xb)
                loss = moco_loss(q, k, queue.bank, score_cfg)
            else:
                _, qa = model.forward_spatial(xa)
                _, qb = model.forward_spatial(xb)
                ta = model.forward_target(xa)
                tb = model.forward_target(xb)
                loss = byol_loss(torch.cat([qa, qb]), torch.cat([tb, ta]))
            opt.zero_grad()
            loss.backward()
            opt.step()
            if cfg.method == "moco":
                queue.enqueue(k)
            losses.append(float(loss.detach()))
        rows.append(
            {
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "lr": lr,
                "wall_time": time.monotonic() - t0,
            }
        )
    model.eval()
    if log_path is not None:
        write_metrics_csv(log_path, rows)
    return model, rows


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "loss", "lr", "wall_time"])
        writer.writeheader()
        writer.writerows(rows)


def extract_cams(
    model: EncoderModel,
    images: np.ndarray,
    iterations: int,
    expanded: bool,
    negative_batch: int = 64,
    seed: int = 0,
    mask_color=0.0,
    cam_cfg: CamConfig | None = None,
) -> np.ndarray:
    """Saliency maps for a whole dataset, batched as mutual negatives.

    The dataset is shuffled with the given seed and swept in batches of
    `negative_batch`; within a batch every image serves as a negative for
    the others. A trailing batch of one image borrows the previous batch's
    tail to keep at least two images together.
    """
    images = np.asarray(images, dtype=np.float32)
    n = images.shape[0]
    if n < 2:
        raise ValueError("need at least two images to form negative batches")
    base = cam_cfg or CamConfig()
    cfg = CamConfig(tau=base.tau, negative_signal_removal=base.negative_signal_removal, expanded=expanded)
    order = np.random.default_rng(seed).permutation(n)
    cams = np.zeros(images.shape[:3], dtype=np.float32)
    step = max(2, negative_batch)
    starts = list(range(0, n, step))
    if len(starts) > 1 and n - starts[-1] < 2:
        starts[-1] = n - 2
    for start in starts:
        chunk = order[start : start + step]
        cams[chunk] = iterative_contracam(images[chunk], model, iterations, mask_color=mask_color, cfg=cfg)
    return cams


def precompute_masks_and_boxes(
    model: EncoderModel,
    images: np.ndarray,
    stems: list[str],
    out_dir,
    box_cfg: BoxExtractionConfig = BoxExtractionConfig(),
    refiner: str = "none",
    iterations: int = 10,
    mix_iterations: int = 1,
    negative_batch: int = 64,
    seed: int = 0,
    tau: float = 0.2,
) -> dict:
    """Persist per-image mixup masks and object boxes from a trained model.

    Boxes come from the iteratively refined maps at expanded resolution
    (refined to a binary mask, then component boxes); the mixup masks are
    single-iteration maps at native resolution. Returns the in-memory
    artifacts: {"cams": (N, H, W), "boxes": [[BoundingBox, ...], ...]}.
    """
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    loc_cams = extract_cams(
        model, images, iterations, expanded=True, negative_batch=negative_batch, seed=seed, cam_cfg=CamConfig(tau=tau)
    )
    mix_cams = extract_cams(
        model, images, mix_iterations, expanded=False, negative_batch=negative_batch, seed=seed, cam_cfg=CamConfig(tau=tau)
    )
    boxes_per_image = []
    with open(out / "boxes.jsonl", "w") as fh:
        for stem, image, cam in zip(stems, images, loc_cams):
            mask = refine_mask(cam, image, refiner=refiner, threshold=box_cfg.threshold)
            boxes = extract_boxes(mask, box_cfg)
            boxes_per_image.append(boxes)
            fh.write(json.dumps({"image": stem, "boxes": [list(b.astuple()) for b in boxes]}) + "\n")
    for stem, cam in zip(stems, mix_cams):
        save_saliency(out / "masks" / f"{stem}.png", cam)
    return {"cams": mix_cams, "boxes": boxes_per_image}


def load_boxes_jsonl(path) -> dict[str, list[BoundingBox]]:
    out = {}
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            out[rec["image"]] = [BoundingBox(*map(int, b)) for b in rec["boxes"]]
    return out
