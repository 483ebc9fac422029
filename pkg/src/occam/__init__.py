"""Object-centric contrastive activation mapping.

Self-supervised object localization from contrastively trained encoders,
plus the two saliency-driven augmentations (object-aware random crop and
background mixup) that reduce scene bias during contrastive training.
"""

from .augment import (
    AugmentationConfig,
    augment_view,
    background_mixup,
    make_background_only,
    maybe_mix,
    object_aware_crop,
    standard_views,
)
from .cam import CamConfig, cam_from_score, contracam, iterative_contracam, load_saliency, save_saliency
from .core import BoundingBox, as_image, as_mask, as_saliency, elementwise_blend, normalize_map
from .data import DatasetManifest, SyntheticSpec, generate_synthetic
from .encoder import EncoderConfig, EncoderModel, load_checkpoint, save_checkpoint
from .evaluation import (
    LinearEvalConfig,
    avg_min_l2_distance,
    box_iou,
    linear_eval,
    mask_miou,
    max_box_acc_v2,
)
from .postprocess import (
    BoxExtractionConfig,
    binarize,
    extract_boxes,
    largest_background_rectangle,
    refine_mask,
    register_refiner,
    tile_background,
)
from .scores import ScoreConfig, byol_loss, contrastive_score, cosine_similarity, moco_loss, similarity_score
from .training import TrainConfig, extract_cams, precompute_masks_and_boxes, train

__version__ = "0.1.0"
