"""Small residual CNN encoder with projector/predictor heads and momentum copies.

The backbone is a stack of stride-2 stages (first one is the stem), so the
spatial size of the final activations is H / 2^n_stages. At inference the
stride of the final stage can be dropped to 1, exactly doubling the spatial
resolution of the penultimate activations without touching any weights.

Checkpoints are flat .npz archives: a magic string entry, a format version
entry, a JSON config echo, and one ``param/<name>`` entry per parameter.
"""

from dataclasses import dataclass, asdict
import json

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

CHECKPOINT_MAGIC = "OCCAM-CKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    stage_widths: tuple = (32, 64, 128, 128)
    blocks_per_stage: int = 1
    projector_hidden: int = 256
    embedding_dim: int = 64
    predictor_hidden: int = 256
    use_predictor: bool = False
    norm_groups: int = 8

    def __post_init__(self):
        if len(self.stage_widths) < 2:
            raise ValueError("need at least a stem and one residual stage")
        for w in self.stage_widths:
            if w % self.norm_groups != 0:
                raise ValueError(f"stage width {w} not divisible by {self.norm_groups} norm groups")

    @property
    def downsampling(self) -> int:
        return 2 ** len(self.stage_widths)


def _gn(groups: int, width: int) -> nn.GroupNorm:
    return nn.GroupNorm(groups, width)


class _ResidualBlock(nn.Module):
    """3x3-3x3 residual block; entry stride is a forward-time argument."""

    def __init__(self, in_ch: int, out_ch: int, groups: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=1, padding=1, bias=False)
        self.norm1 = _gn(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, stride=1, padding=1, bias=False)
        self.norm2 = _gn(groups, out_ch)
        self.shortcut = nn.Conv2d(in_ch, out_ch, 1, stride=1, bias=False) if in_ch != out_ch else None

    def forward(self, x: torch.Tensor, stride: int = 1) -> torch.Tensor:
        out = F.conv2d(x, self.conv1.weight, stride=stride, padding=1)
        out = F.relu(self.norm1(out))
        out = self.norm2(self.conv2(out))
        if self.shortcut is not None:
            identity = F.conv2d(x, self.shortcut.weight, stride=stride)
        elif stride != 1:
            identity = x[:, :, ::stride, ::stride]
        else:
            identity = x
        return F.relu(out + identity)


class Backbone(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        widths = cfg.stage_widths
        self.stem = nn.Sequential(
            nn.Conv2d(3, widths[0], 3, stride=2, padding=1, bias=False),
            _gn(cfg.norm_groups, widths[0]),
            nn.ReLU(inplace=True),
        )
        stages = []
        in_ch = widths[0]
        for w in widths[1:]:
            blocks = [_ResidualBlock(in_ch, w, cfg.norm_groups)]
            blocks += [_ResidualBlock(w, w, cfg.norm_groups) for _ in range(cfg.blocks_per_stage - 1)]
            stages.append(nn.ModuleList(blocks))
            in_ch = w
        self.stages = nn.ModuleList(stages)
        self.feature_dim = in_ch

    def forward(self, x: torch.Tensor, expanded: bool = False) -> torch.Tensor:
        min_side = self.cfg.downsampling
        if x.shape[-2] < min_side or x.shape[-1] < min_side:
            raise ValueError(f"input {tuple(x.shape[-2:])} below the minimum footprint {min_side}x{min_side}")
        out = self.stem(x)
        last = len(self.stages) - 1
        for i, blocks in enumerate(self.stages):
            entry_stride = 1 if (expanded and i == last) else 2
            out = blocks[0](out, stride=entry_stride)
            for block in blocks[1:]:
                out = block(out)
        return out


def _mlp(in_dim: int, hidden: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, out_dim))


class EncoderModel(nn.Module):
    """Online encoder/projector (plus optional predictor) with momentum copies.

    The online branch produces the differentiable output z(x); the momentum
    branch produces stop-gradient targets. With a predictor configured the
    online output is predictor(projector(features)), otherwise just
    projector(features).
    """

    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        self.projector = _mlp(self.backbone.feature_dim, cfg.projector_hidden, cfg.embedding_dim)
        self.predictor = (
            _mlp(cfg.embedding_dim, cfg.predictor_hidden, cfg.embedding_dim) if cfg.use_predictor else None
        )
        self.backbone_m = Backbone(cfg)
        self.projector_m = _mlp(self.backbone.feature_dim, cfg.projector_hidden, cfg.embedding_dim)
        self._reset_momentum_branch()

    def _reset_momentum_branch(self):
        for online, target in ((self.backbone, self.backbone_m), (self.projector, self.projector_m)):
            target.load_state_dict(online.state_dict())
            for p in target.parameters():
                p.requires_grad_(False)

    @property
    def feature_dim(self) -> int:
        return self.backbone.feature_dim

    def project(self, pooled: torch.Tensor) -> torch.Tensor:
        z = self.projector(pooled)
        if self.predictor is not None:
            z = self.predictor(z)
        return z

    def forward_spatial(self, images: torch.Tensor, expanded: bool = False):
        """Return (penultimate spatial activations, online output z(x))."""
        acts = self.backbone(images, expanded=expanded)
        pooled = acts.mean(dim=(2, 3))
        return acts, self.project(pooled)

    def project_momentum(self, pooled: torch.Tensor) -> torch.Tensor:
        return self.projector_m(pooled)

    @torch.no_grad()
    def forward_target(self, images: torch.Tensor) -> torch.Tensor:
        """Momentum-branch target z_bar(x); never receives gradient."""
        acts = self.backbone_m(images)
        return self.projector_m(acts.mean(dim=(2, 3)))

    @torch.no_grad()
    def backbone_features(self, images: torch.Tensor, expanded: bool = False) -> torch.Tensor:
        """Pooled backbone representation f(x), used for linear evaluation."""
        return self.backbone(images, expanded=expanded).mean(dim=(2, 3))

    @torch.no_grad()
    def momentum_update(self, m: float):
        """EMA update of the momentum branch: theta_m <- m*theta_m + (1-m)*theta."""
        if not 0.0 <= m <= 1.0:
            raise ValueError(f"momentum coefficient must lie in [0, 1], got {m}")
        for online, target in ((self.backbone, self.backbone_m), (self.projector, self.projector_m)):
            for p, p_m in zip(online.parameters(), target.parameters()):
                p_m.mul_(m).add_(p, alpha=1.0 - m)


def images_to_tensor(images: np.ndarray) -> torch.Tensor:
    """(B, H, W, 3) float array in [0, 1] -> (B, 3, H, W) float32 tensor."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def save_checkpoint(model: EncoderModel, path, extra_config: dict | None = None):
    """Write the versioned flat checkpoint archive."""
    config = {"encoder": asdict(model.cfg)}
    if extra_config:
        config.update(extra_config)
    entries = {
        "__magic__": np.array(CHECKPOINT_MAGIC),
        "__version__": np.array(CHECKPOINT_VERSION),
        "__config__": np.array(json.dumps(config, sort_keys=True)),
    }
    for name, tensor in model.state_dict().items():
        entries[f"param/{name}"] = tensor.numpy()
    with open(path, "wb") as fh:
        np.savez(fh, **entries)


def load_checkpoint(path) -> tuple[EncoderModel, dict]:
    """Read a checkpoint archive; returns the model and the config echo."""
    with np.load(path) as archive:
        magic = str(archive["__magic__"])
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        version = int(archive["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        config = json.loads(str(archive["__config__"]))
        enc = dict(config["encoder"])
        enc["stage_widths"] = tuple(enc["stage_widths"])
        model = EncoderModel(EncoderConfig(**enc))
        state = {name[len("param/") :]: torch.from_numpy(archive[name]) for name in archive.files if name.startswith("param/")}
    model.load_state_dict(state)
    model.eval()
    return model, config
