"""Command-line surface chaining generation, training, extraction, and evaluation.

A typical debiasing workflow:

    occam gen-data --config cfg.yaml --out data/
    occam train --data data/ --out run0/
    occam cam --model run0/checkpoint.npz --data data/ --iters 1 --no-expanded --out cams1/
    occam cam --model run0/checkpoint.npz --data data/ --iters 10 --expanded --out cams10/
    occam boxes --cams cams10/ --data data/ --out boxes0/
    occam train --data data/ --debias oa_crop --boxes boxes0/boxes.jsonl --out run1/
    occam eval-linear --model run1/checkpoint.npz --train-data data/ --test-data data/ --out eval1/

Artifacts land in --out, or under $OCCAM_CACHE/<command>-<config hash> when
--out is omitted.
"""

import functools
import json
import os
from pathlib import Path
import sys

import click
import numpy as np
import torch

from . import config as cfgmod
from .cam import load_saliency, save_saliency
from .core import BoundingBox
from .data import DatasetManifest, generate_synthetic, load_image, load_mask, save_image
from .encoder import load_checkpoint, save_checkpoint, images_to_tensor
from .evaluation import linear_eval, mask_miou, max_box_acc_v2
from .postprocess import binarize, extract_boxes, refine_mask
from .report import build_report, collect_metrics, write_metric_json
from .training import extract_cams, load_boxes_jsonl, train, write_metrics_csv
from .augment import background_mixup, make_background_only


def _artifact_dir(out, command: str, cfg: dict) -> Path:
    if out is not None:
        return Path(out)
    root = Path(os.environ.get("OCCAM_CACHE", "occam-artifacts"))
    return root / f"{command}-{cfgmod.config_hash(cfg)}"


def _fail_cleanly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (click.ClickException, click.Abort):
            raise
        except Exception as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _common(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="YAML config file.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Override every seed in the config.")(fn)
    fn = click.option("--out", type=click.Path(), default=None, help="Artifact directory.")(fn)
    fn = click.option("--workers", type=int, default=None, help="Compute threads for this command.")(fn)
    return _fail_cleanly(fn)


def _load(config_path, seed, workers, extra_overrides=None):
    overrides = dict(extra_overrides or {})
    if seed is not None:
        for section in ("dataset", "train", "cam", "eval"):
            overrides.setdefault(section, {})["seed"] = seed
    cfg = cfgmod.load_config(config_path, overrides)
    if workers is not None:
        torch.set_num_threads(workers)
    return cfg


@click.group()
def main():
    """Self-supervised object localization and debiased contrastive training."""


@main.command("gen-data")
@_common
def gen_data(config_path, seed, out, workers):
    """Generate a synthetic shapes dataset with ground-truth masks and boxes."""
    cfg = _load(config_path, seed, workers)
    out_dir = _artifact_dir(out, "gen-data", cfg)
    manifest = generate_synthetic(cfgmod.synthetic_spec(cfg), out_dir)
    cfgmod.write_run_record(out_dir, "gen-data", cfg, {"n_images": len(manifest.entries)})
    click.echo(f"wrote {len(manifest.entries)} images to {out_dir}")


@main.command("train")
@click.option("--data", "data_path", type=click.Path(exists=True), required=True, help="Dataset manifest.")
@click.option("--debias", type=click.Choice(["none", "oa_crop", "bg_mixup", "bg_hardmix"]), default=None)
@click.option("--p-mix", type=float, default=None, help="Background mixup probability.")
@click.option("--epochs", type=int, default=None)
@click.option("--masks", "masks_dir", type=click.Path(exists=True), default=None, help="Precomputed saliency maps.")
@click.option("--boxes", "boxes_path", type=click.Path(exists=True), default=None, help="Precomputed boxes.jsonl.")
@_common
def train_cmd(data_path, debias, p_mix, epochs, masks_dir, boxes_path, config_path, seed, out, workers):
    """Train an encoder, optionally with a debiasing augmentation."""
    overrides = {"train": {}, "augment": {}}
    if debias is not None:
        overrides["train"]["debias"] = debias
    if epochs is not None:
        overrides["train"]["epochs"] = epochs
    if p_mix is not None:
        overrides["augment"]["p_mix"] = p_mix
    cfg = _load(config_path, seed, workers, overrides)
    out_dir = _artifact_dir(out, "train", cfg)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = DatasetManifest.load(data_path)
    images = manifest.load_images("train")
    stems = manifest.stems("train")
    precomputed = None
    mode = cfg["train"]["debias"]
    if mode == "oa_crop":
        if boxes_path is None:
            raise click.UsageError("--debias oa_crop needs --boxes")
        by_stem = load_boxes_jsonl(boxes_path)
        precomputed = {"boxes": [by_stem.get(s, []) for s in stems]}
    elif mode in ("bg_mixup", "bg_hardmix"):
        if masks_dir is None:
            raise click.UsageError(f"--debias {mode} needs --masks")
        precomputed = {"cams": np.stack([load_saliency(Path(masks_dir) / f"{s}.png") for s in stems])}

    model, rows = train(cfgmod.train_config(cfg), images, precomputed, log_path=out_dir / "metrics.csv")
    save_checkpoint(model, out_dir / "checkpoint.npz", {"config": cfg, "config_hash": cfgmod.config_hash(cfg)})
    cfgmod.write_run_record(out_dir, "train", cfg, {"final_loss": rows[-1]["loss"] if rows else None})
    click.echo(f"trained {cfg['train']['method']} for {cfg['train']['epochs']} epochs -> {out_dir / 'checkpoint.npz'}")


@main.command("cam")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True, help="Checkpoint file.")
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--iters", type=int, default=None, help="Refinement iterations.")
@click.option("--expanded/--no-expanded", default=None, help="Double the activation resolution.")
@click.option("--split", type=click.Choice(["train", "test", "all"]), default="all")
@_common
def cam_cmd(model_path, data_path, iters, expanded, split, config_path, seed, out, workers):
    """Extract saliency maps for a dataset, one 8-bit file per image."""
    overrides = {"cam": {}}
    if iters is not None:
        overrides["cam"]["iterations"] = iters
    if expanded is not None:
        overrides["cam"]["expanded"] = expanded
    cfg = _load(config_path, seed, workers, overrides)
    out_dir = _artifact_dir(out, "cam", cfg)
    out_dir.mkdir(parents=True, exist_ok=True)

    model, _ = load_checkpoint(model_path)
    manifest = DatasetManifest.load(data_path)
    which = None if split == "all" else split
    images = manifest.load_images(which)
    cams = extract_cams(
        model,
        images,
        iterations=cfg["cam"]["iterations"],
        expanded=cfg["cam"]["expanded"],
        negative_batch=cfg["cam"]["negative_batch"],
        seed=cfg["cam"]["seed"],
        mask_color=cfg["cam"]["mask_color"],
        cam_cfg=cfgmod.cam_config(cfg),
    )
    for stem, cam in zip(manifest.stems(which), cams):
        save_saliency(out_dir / f"{stem}.png", cam)
    cfgmod.write_run_record(out_dir, "cam", cfg, {"n_images": int(cams.shape[0]), "model": str(model_path)})
    click.echo(f"wrote {cams.shape[0]} saliency maps to {out_dir}")


@main.command("boxes")
@click.option("--cams", "cams_dir", type=click.Path(exists=True), required=True, help="Directory of saliency maps.")
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--threshold", type=float, default=None)
@click.option("--margin", type=float, default=None)
@click.option("--min-area", type=float, default=None)
@_common
def boxes_cmd(cams_dir, data_path, threshold, margin, min_area, config_path, seed, out, workers):
    """Turn saliency maps into object bounding boxes (JSON lines)."""
    overrides = {"boxes": {}}
    if threshold is not None:
        overrides["boxes"]["threshold"] = threshold
    if margin is not None:
        overrides["boxes"]["margin_frac"] = margin
    if min_area is not None:
        overrides["boxes"]["min_area_frac"] = min_area
    cfg = _load(config_path, seed, workers, overrides)
    out_dir = _artifact_dir(out, "boxes", cfg)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = DatasetManifest.load(data_path)
    box_cfg = cfgmod.box_config(cfg)
    refiner = cfg["boxes"]["refiner"]
    n = 0
    with open(out_dir / "boxes.jsonl", "w") as fh:
        for entry in manifest.entries:
            stem = Path(entry["image"]).stem
            cam_path = Path(cams_dir) / f"{stem}.png"
            if not cam_path.exists():
                continue
            cam = load_saliency(cam_path)
            image = load_image(manifest.root / entry["image"])
            mask = refine_mask(cam, image, refiner=refiner, threshold=box_cfg.threshold)
            boxes = extract_boxes(mask, box_cfg)
            fh.write(json.dumps({"image": stem, "boxes": [list(b.astuple()) for b in boxes]}) + "\n")
            n += 1
    cfgmod.write_run_record(out_dir, "boxes", cfg, {"n_images": n})
    click.echo(f"wrote boxes for {n} images to {out_dir / 'boxes.jsonl'}")


@main.command("bg-preview")
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--masks", "masks_dir", type=click.Path(exists=True), required=True, help="Single-iteration saliency maps.")
@click.option("--count", type=int, default=8, help="Number of preview pairs.")
@_common
def bg_preview(data_path, masks_dir, count, config_path, seed, out, workers):
    """Render background-only donors and mixed images for inspection."""
    cfg = _load(config_path, seed, workers)
    out_dir = _artifact_dir(out, "bg-preview", cfg)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = DatasetManifest.load(data_path)
    entries = manifest.select("train")[: max(count, 1)]
    threshold = cfg["augment"]["mix_threshold"]
    made = 0
    for i, entry in enumerate(entries):
        stem = Path(entry["image"]).stem
        donor_entry = entries[(i + 1) % len(entries)]
        donor_stem = Path(donor_entry["image"]).stem
        image = load_image(manifest.root / entry["image"])
        cam = load_saliency(Path(masks_dir) / f"{stem}.png")
        donor = load_image(manifest.root / donor_entry["image"])
        donor_cam = load_saliency(Path(masks_dir) / f"{donor_stem}.png")
        try:
            bg = make_background_only(donor, donor_cam, threshold)
        except ValueError:
            continue
        save_image(out_dir / f"{stem}_bg.png", bg)
        save_image(out_dir / f"{stem}_mix.png", background_mixup(image, cam, bg))
        made += 1
    cfgmod.write_run_record(out_dir, "bg-preview", cfg, {"n_previews": made})
    click.echo(f"wrote {made} preview pairs to {out_dir}")


@main.command("eval-loc")
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--cams", "cams_dir", type=click.Path(exists=True), required=True)
@click.option("--threshold", type=float, default=None)
@_common
def eval_loc(data_path, cams_dir, threshold, config_path, seed, out, workers):
    """Localization metrics: mask mIoU against ground truth and MaxBoxAccV2."""
    overrides = {"boxes": {"threshold": threshold}} if threshold is not None else None
    cfg = _load(config_path, seed, workers, overrides)
    out_dir = _artifact_dir(out, "eval-loc", cfg)

    manifest = DatasetManifest.load(data_path)
    theta = cfg["boxes"]["threshold"]
    cams, gts, boxes = [], [], []
    for entry in manifest.entries:
        stem = Path(entry["image"]).stem
        cam_path = Path(cams_dir) / f"{stem}.png"
        if not cam_path.exists() or entry.get("gt_mask") is None:
            continue
        cams.append(load_saliency(cam_path))
        gts.append(load_mask(manifest.root / entry["gt_mask"]))
        boxes.append(entry.get("gt_boxes", []))
    if not cams:
        raise click.UsageError("no (saliency, ground truth) pairs found")
    gt_boxes = [[BoundingBox(*map(int, b)) for b in lst] for lst in boxes]
    miou = float(np.mean([mask_miou(binarize(c, theta), g) for c, g in zip(cams, gts)]))
    acc = max_box_acc_v2(cams, gt_boxes)
    h = cfgmod.config_hash(cfg)
    s = cfg["eval"]["seed"]
    dataset = str(Path(data_path).name)
    write_metric_json(out_dir, "mask_miou", dataset, miou, h, s)
    write_metric_json(out_dir, "max_box_acc_v2", dataset, acc, h, s)
    cfgmod.write_run_record(out_dir, "eval-loc", cfg, {"n_images": len(cams)})
    click.echo(f"mask_miou={miou:.4f} max_box_acc_v2={acc:.4f} ({len(cams)} images) -> {out_dir}")


def _center_crop_features(model, manifest: DatasetManifest, split, view_size: int) -> np.ndarray:
    images = manifest.load_images(split)
    h, w = images.shape[1:3]
    if h > view_size and w > view_size:
        top = (h - view_size) // 2
        left = (w - view_size) // 2
        images = images[:, top : top + view_size, left : left + view_size]
    feats = []
    for start in range(0, images.shape[0], 128):
        feats.append(model.backbone_features(images_to_tensor(images[start : start + 128])).numpy())
    return np.concatenate(feats)


@main.command("eval-linear")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--train-data", type=click.Path(exists=True), required=True)
@click.option("--test-data", type=click.Path(exists=True), required=True)
@_common
def eval_linear(model_path, train_data, test_data, config_path, seed, out, workers):
    """Linear-probe accuracy of frozen features."""
    cfg = _load(config_path, seed, workers)
    out_dir = _artifact_dir(out, "eval-linear", cfg)

    model, _ = load_checkpoint(model_path)
    view = cfg["augment"]["view_size"]
    train_man = DatasetManifest.load(train_data)
    test_man = DatasetManifest.load(test_data)
    acc = linear_eval(
        _center_crop_features(model, train_man, "train", view),
        train_man.labels("train"),
        _center_crop_features(model, test_man, "test", view),
        test_man.labels("test"),
        cfgmod.linear_eval_config(cfg),
    )
    h = cfgmod.config_hash(cfg)
    write_metric_json(out_dir, "linear_accuracy", str(Path(test_data).name), acc, h, cfg["eval"]["seed"])
    cfgmod.write_run_record(out_dir, "eval-linear", cfg, {"model": str(model_path)})
    click.echo(f"linear_accuracy={acc:.4f} -> {out_dir}")


@main.command("report")
@click.option("--data", "data_path", type=click.Path(exists=True), default=None)
@click.option("--cams", "cams_dir", type=click.Path(exists=True), default=None)
@click.option("--metrics", "metric_paths", type=click.Path(exists=True), multiple=True)
@click.option("--count", type=int, default=8, help="Number of overlay images.")
@_common
def report_cmd(data_path, cams_dir, metric_paths, count, config_path, seed, out, workers):
    """Render a markdown summary with metric tables and saliency overlays."""
    cfg = _load(config_path, seed, workers)
    out_dir = _artifact_dir(out, "report", cfg)

    overlays = []
    if data_path and cams_dir:
        manifest = DatasetManifest.load(data_path)
        for entry in manifest.entries[: max(count, 0)]:
            stem = Path(entry["image"]).stem
            cam_path = Path(cams_dir) / f"{stem}.png"
            if cam_path.exists():
                overlays.append((stem, load_image(manifest.root / entry["image"]), load_saliency(cam_path)))
    metrics = collect_metrics(metric_paths)
    path = build_report(out_dir, metrics, overlays)
    cfgmod.write_run_record(out_dir, "report", cfg, {"n_metrics": len(metrics), "n_overlays": len(overlays)})
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
