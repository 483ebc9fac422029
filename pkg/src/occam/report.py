"""Rendering helpers: saliency overlays, metric JSON records, markdown reports."""

import json
from pathlib import Path

import numpy as np

from .core import elementwise_blend
from .data import save_image

_HEAT_COLOR = np.asarray([1.0, 0.1, 0.1], dtype=np.float32)


def overlay_saliency(image: np.ndarray, cam: np.ndarray, strength: float = 0.6) -> np.ndarray:
    """Tint an image toward red where the saliency map is high."""
    heat = np.broadcast_to(_HEAT_COLOR, image.shape)
    return elementwise_blend(heat, strength * np.asarray(cam, dtype=np.float32), image)


def write_metric_json(out_dir, metric: str, dataset: str, value: float, config_hash: str, seed: int) -> Path:
    record = {
        "metric": metric,
        "dataset": dataset,
        "value": float(value),
        "config_hash": config_hash,
        "seed": int(seed),
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{metric}.json"
    with open(path, "w") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)
    return path


def collect_metrics(paths) -> list[dict]:
    """Gather metric records from JSON files or directories of them."""
    records = []
    for p in paths:
        p = Path(p)
        files = sorted(p.glob("*.json")) if p.is_dir() else [p]
        for f in files:
            try:
                with open(f) as fh:
                    rec = json.load(fh)
            except (OSError, json.JSONDecodeError):
                continue
            if isinstance(rec, dict) and {"metric", "value"} <= set(rec):
                records.append(rec)
    return records


def build_report(out_dir, metrics: list[dict], overlays: list[tuple[str, np.ndarray, np.ndarray]]) -> Path:
    """Write report.md plus overlay images; returns the report path.

    `overlays` holds (stem, image, saliency) triples rendered into an
    image gallery.
    """
    out = Path(out_dir)
    (out / "overlays").mkdir(parents=True, exist_ok=True)
    lines = ["# Localization and debiasing report", ""]
    if metrics:
        lines += [
            "## Metrics",
            "",
            "| metric | dataset | value | config | seed |",
            "| --- | --- | --- | --- | --- |",
        ]
        for rec in metrics:
            lines.append(
                "| {metric} | {dataset} | {value:.4f} | {config_hash} | {seed} |".format(
                    metric=rec.get("metric", "?"),
                    dataset=rec.get("dataset", "?"),
                    value=float(rec.get("value", float("nan"))),
                    config_hash=rec.get("config_hash", "?"),
                    seed=rec.get("seed", "?"),
                )
            )
        lines.append("")
    if overlays:
        lines += ["## Saliency overlays", ""]
        for stem, image, cam in overlays:
            name = f"overlays/{stem}.png"
            save_image(out / name, overlay_saliency(image, cam))
            lines.append(f"![{stem}]({name})")
        lines.append("")
    report = out / "report.md"
    report.write_text("\n".join(lines))
    return report
