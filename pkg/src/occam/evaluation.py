"""Measurement protocols: mask mIoU, box localization accuracy, linear probes.

The localization accuracy sweeps a binarization threshold grid; for each
IoU level it keeps the best fraction of images whose largest-component box
hits any ground-truth box, then averages the per-level maxima.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.linear_model import LogisticRegression

from .core import BoundingBox, as_mask
from .postprocess import BoxExtractionConfig, binarize, extract_boxes

DEFAULT_IOU_LEVELS = (0.3, 0.5, 0.7)


def default_threshold_grid(n: int = 100) -> np.ndarray:
    """n evenly spaced binarization thresholds strictly inside (0, 1)."""
    return np.arange(1, n + 1) / (n + 1)


def mask_miou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two binary masks; two empty masks agree perfectly."""
    pred = as_mask(pred)
    gt = as_mask(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.right, b.right) - max(a.left, b.left)
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def best_box(cam: np.ndarray, threshold: float) -> BoundingBox | None:
    """Tight box of the largest component of the thresholded map, if any."""
    boxes = extract_boxes(binarize(cam, threshold), BoxExtractionConfig(threshold=threshold, margin_frac=0.0, min_area_frac=0.0))
    return boxes[0] if boxes else None


def max_box_acc_v2(
    cams,
    gt_boxes,
    thresholds=None,
    iou_levels=DEFAULT_IOU_LEVELS,
) -> float:
    """Mean over IoU levels of the best threshold's hit fraction.

    A hit at level delta means the image's best extracted box reaches IoU
    >= delta with at least one of its ground-truth boxes.
    """
    if thresholds is None:
        thresholds = default_threshold_grid()
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.size == 0:
        raise ValueError("threshold grid must not be empty")
    cams = list(cams)
    gt_boxes = list(gt_boxes)
    if len(cams) == 0 or len(cams) != len(gt_boxes):
        raise ValueError("need one ground-truth box list per saliency map")
    best_ious = np.zeros((len(cams), thresholds.size))
    for i, (cam, gts) in enumerate(zip(cams, gt_boxes)):
        for j, theta in enumerate(thresholds):
            box = best_box(cam, float(theta))
            if box is None or not gts:
                continue
            best_ious[i, j] = max(box_iou(box, gt) for gt in gts)
    per_level = [float(np.max(np.mean(best_ious >= delta, axis=0))) for delta in iou_levels]
    return float(np.mean(per_level))


@dataclass(frozen=True)
class LinearEvalConfig:
    """45 l2 penalties log-spaced over (1e-6, 1e5), validated split selection."""

    reg_values: tuple = tuple(np.logspace(-6, 5, 45))
    max_iter: int = 200
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if list(self.reg_values) != sorted(self.reg_values):
            raise ValueError("regularization sweep must be sorted ascending")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("validation fraction must lie in (0, 1)")


def linear_eval(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    test_features: np.ndarray,
    test_labels: np.ndarray,
    cfg: LinearEvalConfig = LinearEvalConfig(),
) -> float:
    """Test accuracy of an l2-regularized multinomial logistic probe.

    The regularization strength is chosen on a held-out validation split by
    accuracy; the selected setting is refit on the full training set.
    """
    train_features = np.asarray(train_features, dtype=np.float64)
    test_features = np.asarray(test_features, dtype=np.float64)
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    if not (np.isfinite(train_features).all() and np.isfinite(test_features).all()):
        raise ValueError("features must be finite")
    if np.unique(train_labels).size < 2:
        raise ValueError("linear evaluation needs at least two classes")

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(train_features.shape[0])
    n_val = max(1, int(round(cfg.val_fraction * order.size)))
    val_idx, fit_idx = order[:n_val], order[n_val:]

    mean = train_features.mean(axis=0)
    scale = train_features.std(axis=0) + 1e-8
    tr = (train_features - mean) / scale
    te = (test_features - mean) / scale

    def fit(lam: float, x, y) -> LogisticRegression:
        clf = LogisticRegression(C=1.0 / lam, solver="lbfgs", max_iter=cfg.max_iter, tol=1e-4)
        clf.fit(x, y)
        return clf

    val_scores = []
    for lam in cfg.reg_values:
        clf = fit(lam, tr[fit_idx], train_labels[fit_idx])
        val_scores.append(clf.score(tr[val_idx], train_labels[val_idx]))
    chosen = cfg.reg_values[int(np.argmax(val_scores))]
    final = fit(chosen, tr, train_labels)
    return float(final.score(te, test_labels))


def avg_min_l2_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Symmetrized mean nearest-neighbor l2 distance between two embedding sets."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("embedding sets must be nonempty")
    d = cdist(x, y)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())
