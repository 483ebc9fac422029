"""Config documents: nested YAML, defaults, hashing, dataclass builders.

Every command echoes its effective config (and its hash) into the run
record next to its artifacts, so any output can be traced back to the
exact settings that produced it.
"""

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .augment import AugmentationConfig
from .cam import CamConfig
from .data import SyntheticSpec
from .encoder import EncoderConfig
from .evaluation import LinearEvalConfig
from .postprocess import BoxExtractionConfig
from .training import TrainConfig


def default_config() -> dict:
    return {
        "dataset": {
            "n_images": 200,
            "image_size": 64,
            "shape_classes": ["circle", "triangle", "rectangle"],
            "textures": 4,
            "objects_min": 1,
            "objects_max": 1,
            "bias": "none",
            "co_occurrence": 0.9,
            "test_fraction": 0.1,
            "seed": 0,
        },
        "encoder": {
            "stage_widths": [32, 64, 128, 128],
            "blocks_per_stage": 1,
            "projector_hidden": 256,
            "embedding_dim": 64,
            "predictor_hidden": 256,
            "use_predictor": False,
            "norm_groups": 8,
        },
        "augment": {
            "view_size": 64,
            "crop_scale_min": 0.08,
            "crop_scale_max": 1.0,
            "flip_prob": 0.5,
            "jitter_strength": [0.4, 0.4, 0.4, 0.1],
            "jitter_prob": 0.8,
            "grayscale_prob": 0.2,
            "blur_kernel": 23,
            "blur_sigma": [0.1, 2.0],
            "blur_prob": 0.5,
            "p_mix": 0.4,
            "mix_threshold": 0.2,
        },
        "train": {
            "method": "moco",
            "epochs": 40,
            "batch_size": 64,
            "queue_size": 1024,
            "momentum": 0.99,
            "lr": 0.03,
            "sgd_momentum": 0.9,
            "weight_decay": 1e-4,
            "tau": 0.2,
            "seed": 0,
            "debias": "none",
            "donor_pool_size": 64,
        },
        "cam": {
            "iterations": 10,
            "expanded": True,
            "negative_batch": 64,
            "tau": 0.2,
            "negative_signal_removal": True,
            "mask_color": 0.0,
            "seed": 0,
        },
        "boxes": {
            "threshold": 0.2,
            "margin_frac": 0.2,
            "min_area_frac": 0.01,
            "refiner": "none",
        },
        "eval": {
            "val_fraction": 0.2,
            "max_iter": 200,
            "seed": 0,
        },
    }


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, overlaid with the YAML file, overlaid with CLI overrides."""
    cfg = default_config()
    if path is not None:
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ValueError(f"config file {path} must hold a mapping at the top level")
        unknown = set(user) - set(cfg)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        cfg = _deep_merge(cfg, user)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def write_run_record(out_dir, command: str, cfg: dict, extra: dict | None = None):
    """Echo the effective config (and its hash) next to a command's artifacts."""
    record = {"command": command, "config": cfg, "config_hash": config_hash(cfg)}
    if extra:
        record.update(extra)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run.json", "w") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)
    return record


def synthetic_spec(cfg: dict) -> SyntheticSpec:
    d = dict(cfg["dataset"])
    d["shape_classes"] = tuple(d["shape_classes"])
    return SyntheticSpec(**d)


def encoder_config(cfg: dict) -> EncoderConfig:
    d = dict(cfg["encoder"])
    d["stage_widths"] = tuple(d["stage_widths"])
    return EncoderConfig(**d)


def augmentation_config(cfg: dict) -> AugmentationConfig:
    d = dict(cfg["augment"])
    d["view_size"] = cfg["dataset"]["image_size"] if d.get("view_size") is None else d["view_size"]
    d["jitter_strength"] = tuple(d["jitter_strength"])
    d["blur_sigma"] = tuple(d["blur_sigma"])
    hard = cfg["train"]["debias"] == "bg_hardmix"
    return AugmentationConfig(**d, aspect_range=(3.0 / 4.0, 4.0 / 3.0), hard_mix=hard)


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(encoder=encoder_config(cfg), augment=augmentation_config(cfg), **cfg["train"])


def cam_config(cfg: dict) -> CamConfig:
    c = cfg["cam"]
    return CamConfig(tau=c["tau"], negative_signal_removal=c["negative_signal_removal"], expanded=c["expanded"])


def box_config(cfg: dict) -> BoxExtractionConfig:
    b = cfg["boxes"]
    return BoxExtractionConfig(threshold=b["threshold"], margin_frac=b["margin_frac"], min_area_frac=b["min_area_frac"])


def linear_eval_config(cfg: dict) -> LinearEvalConfig:
    e = cfg["eval"]
    return LinearEvalConfig(val_fraction=e["val_fraction"], max_iter=e["max_iter"], seed=e["seed"])
