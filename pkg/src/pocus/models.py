"""Classifier architectures and the probability-output contract.

Every classifier maps its input batch to softmax probabilities over the four
classes.  Frame models additionally expose their last convolutional feature
maps and final dense weights, which the activation-map code consumes.

Pixel batches use the dataset layout (B, 224, 224, 3) in [0, 1]; conversion
to channel-first tensors happens at the model boundary, together with the
backbone normalization when pretrained weights are in play.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import (
    AugmentationPolicy,
    RecordingMeta,
    apply_transform,
    crop_square,
    draw_transform,
    extract_frames,
    preprocess,
)
from .errors import ConfigError, UnsupportedOperationError, ValidationError

ARCHS = ("vgg_head", "vgg_cam", "mobile", "segment_enc", "video3d")
SEGMENT_FEATURE_DIM = 560

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class ClassifierConfig:
    """Architecture choice plus the knobs shared by all classifiers."""

    arch: str
    n_classes: int = 4
    dropout_rate: float = 0.5
    trainable_tail_layers: int = 3
    pretrained_backbone: bool = False
    backbone_weights: str | None = None
    cam_layer: str | None = None  # Grad-CAM target; None = last conv layer
    input_shape: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ConfigError("dropout_rate must be in [0, 1]")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be at least 2")
        if self.trainable_tail_layers < 0:
            raise ConfigError("trainable_tail_layers must be >= 0")
        if not self.input_shape:
            default = {
                "segment_enc": (SEGMENT_FEATURE_DIM,),
                "video3d": (5, 224, 224, 3),
            }.get(self.arch, (224, 224, 3))
            object.__setattr__(self, "input_shape", default)

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["input_shape"] = list(self.input_shape)
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "ClassifierConfig":
        payload = dict(payload)
        payload["input_shape"] = tuple(payload.get("input_shape") or ())
        return cls(**payload)


class BaseClassifier(nn.Module):
    """Shared contract: probability outputs, layer freezing, train-mode rules."""

    def __init__(self, config: ClassifierConfig):
        super().__init__()
        self.config = config
        self._frozen_leaves: list[nn.Module] = []

    # -- construction helpers -------------------------------------------

    def _leaf_modules(self) -> list[nn.Module]:
        return [m for m in self.modules() if not list(m.children())]

    def parametered_layers(self) -> list[nn.Module]:
        """Leaf modules that own parameters, in forward (registration) order."""
        return [m for m in self._leaf_modules()
                if any(True for _ in m.parameters(recurse=False))]

    def apply_freeze(self) -> None:
        """Freeze everything except the configured trainable tail."""
        layers = self.parametered_layers()
        tail = self.config.trainable_tail_layers
        frozen = layers[:-tail] if tail > 0 else layers
        if tail >= len(layers):
            frozen = []
        frozen_set = {id(m) for m in frozen}
        for layer in layers:
            layer.requires_grad_(id(layer) not in frozen_set)
        self._frozen_leaves = frozen

    def train(self, mode: bool = True) -> "BaseClassifier":
        # Frozen layers stay in eval mode so their BN statistics never update.
        super().train(mode)
        if mode:
            for m in self._frozen_leaves:
                m.eval()
        return self

    # -- tensor plumbing -------------------------------------------------

    def prepare_batch(self, batch: np.ndarray | torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # logits
        raise NotImplementedError

    def logits(self, batch: np.ndarray | torch.Tensor) -> torch.Tensor:
        return self(self.prepare_batch(batch))


class FrameClassifier(BaseClassifier):
    """Convolutional backbone + pooled head over single frames."""

    def __init__(self, config: ClassifierConfig, backbone: nn.Module,
                 head: nn.Sequential, feature_channels: int):
        super().__init__(config)
        self.backbone = backbone
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = head
        self.feature_channels = feature_channels
        mean = torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1)
        self.register_buffer("input_mean", mean)
        self.register_buffer("input_std", std)
        self.normalize_input = config.pretrained_backbone

    def prepare_batch(self, batch: np.ndarray | torch.Tensor) -> torch.Tensor:
        if isinstance(batch, np.ndarray):
            batch = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))
        if batch.ndim != 4 or batch.shape[1:] != (224, 224, 3):
            raise ValidationError(f"expected (B, 224, 224, 3) batch, got {tuple(batch.shape)}")
        x = batch.permute(0, 3, 1, 2)
        if self.normalize_input:
            x = (x - self.input_mean) / self.input_std
        return x

    def conv_features(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.backbone(x)
        pooled = torch.flatten(self.pool(feats), 1)
        return self.head(pooled)

    @property
    def cam_target(self) -> nn.Module:
        """Module whose output feeds Grad-CAM.

        Defaults to the whole backbone, i.e. the final convolutional feature
        maps the head pools — the same maps plain CAM weighs.  Override with
        ``cam_layer`` (a named module) to probe an earlier layer.
        """
        if self.config.cam_layer:
            module = dict(self.named_modules()).get(self.config.cam_layer)
            if module is None:
                raise ConfigError(f"cam_layer {self.config.cam_layer!r} not found")
            return module
        return self.backbone

    def cam_weights(self) -> torch.Tensor | None:
        """Final dense weights for plain CAM, if the head is a single linear map.

        Dropout layers are identity at inference, so a head of the form
        [Dropout*, Linear] still qualifies.
        """
        substantive = [m for m in self.head if not isinstance(m, nn.Dropout)]
        if len(substantive) == 1 and isinstance(substantive[0], nn.Linear):
            return substantive[0].weight
        return None


class FeatureClassifier(BaseClassifier):
    """Dense classifier over precomputed per-frame feature encodings."""

    def __init__(self, config: ClassifierConfig, head: nn.Sequential):
        super().__init__(config)
        self.head = head

    def prepare_batch(self, batch: np.ndarray | torch.Tensor) -> torch.Tensor:
        if isinstance(batch, np.ndarray):
            batch = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))
        if batch.ndim != 2 or batch.shape[1] != self.config.input_shape[0]:
            raise ValidationError(
                f"expected (B, {self.config.input_shape[0]}) features, got {tuple(batch.shape)}"
            )
        return batch

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(x)


class VideoClassifier(BaseClassifier):
    """3D-convolutional classifier over fixed-length frame chunks."""

    def __init__(self, config: ClassifierConfig, backbone: nn.Module,
                 head: nn.Sequential):
        super().__init__(config)
        self.backbone = backbone
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.head = head

    def prepare_batch(self, batch: np.ndarray | torch.Tensor) -> torch.Tensor:
        if isinstance(batch, np.ndarray):
            batch = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))
        expected = tuple(self.config.input_shape)
        if batch.ndim != 5 or tuple(batch.shape[1:]) != expected:
            raise ValidationError(f"expected (B, {expected}) chunk batch, got {tuple(batch.shape)}")
        return batch.permute(0, 4, 1, 2, 3)  # B, C, T, H, W

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.backbone(x)
        pooled = torch.flatten(self.pool(feats), 1)
        return self.head(pooled)


def _vgg_backbone(config: ClassifierConfig) -> tuple[nn.Module, int]:
    from torchvision.models import vgg16

    backbone = vgg16(weights=None).features
    if config.pretrained_backbone:
        path = Path(config.backbone_weights or f"weights/{config.arch}_backbone.pt")
        if not path.exists():
            raise ConfigError(
                f"pretrained backbone weights not found at {path}; "
                "download them or set backbone_weights"
            )
        backbone.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    return backbone, 512


def _separable_block(c_in: int, c_out: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_in, 3, stride=stride, padding=1, groups=c_in, bias=False),
        nn.BatchNorm2d(c_in),
        nn.ReLU(inplace=True),
        nn.Conv2d(c_in, c_out, 1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


def _mobile_backbone(config: ClassifierConfig) -> tuple[nn.Module, int]:
    backbone = nn.Sequential(
        nn.Conv2d(3, 16, 3, stride=2, padding=1, bias=False),
        nn.BatchNorm2d(16),
        nn.ReLU(inplace=True),
        _separable_block(16, 32, 2),
        _separable_block(32, 64, 2),
        _separable_block(64, 128, 2),
        _separable_block(128, 128, 1),
        _separable_block(128, 256, 2),
    )
    if config.pretrained_backbone:
        path = Path(config.backbone_weights or "weights/mobile_backbone.pt")
        if not path.exists():
            raise ConfigError(f"pretrained backbone weights not found at {path}")
        backbone.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    return backbone, 256


def build_frame_classifier(config: ClassifierConfig, seed: int | None = None) -> BaseClassifier:
    """Instantiate a frame-level classifier for the configured architecture.

    Passing a seed makes the random initialization reproducible without
    touching the caller's RNG state.
    """
    if config.arch == "video3d":
        raise ConfigError("video3d is built by build_video_classifier")

    def build() -> BaseClassifier:
        if config.arch in ("vgg_head", "vgg_cam"):
            backbone, channels = _vgg_backbone(config)
            if config.arch == "vgg_cam":
                head = nn.Sequential(
                    nn.Dropout(config.dropout_rate),
                    nn.Linear(channels, config.n_classes),
                )
            else:
                head = nn.Sequential(
                    nn.Linear(channels, 64),
                    nn.ReLU(inplace=True),
                    nn.BatchNorm1d(64),
                    nn.Dropout(config.dropout_rate),
                    nn.Linear(64, config.n_classes),
                )
            model: BaseClassifier = FrameClassifier(config, backbone, head, channels)
        elif config.arch == "mobile":
            backbone, channels = _mobile_backbone(config)
            head = nn.Sequential(
                nn.Dropout(config.dropout_rate),
                nn.Linear(channels, config.n_classes),
            )
            model = FrameClassifier(config, backbone, head, channels)
        elif config.arch == "segment_enc":
            head = nn.Sequential(
                nn.Linear(SEGMENT_FEATURE_DIM, 512),
                nn.ReLU(inplace=True),
                nn.Dropout(config.dropout_rate),
                nn.Linear(512, 256),
                nn.ReLU(inplace=True),
                nn.Dropout(config.dropout_rate),
                nn.Linear(256, config.n_classes),
            )
            model = FeatureClassifier(config, head)
        else:  # pragma: no cover - guarded by ClassifierConfig
            raise ConfigError(f"unhandled arch {config.arch!r}")
        model.apply_freeze()
        model.eval()
        return model

    if seed is None:
        return build()
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return build()


def build_video_classifier(config: ClassifierConfig, seed: int | None = None) -> VideoClassifier:
    """3D chunk classifier; falls back to random init when no weights exist."""
    if config.arch != "video3d":
        raise ConfigError(f"build_video_classifier expects arch 'video3d', got {config.arch!r}")

    def build() -> VideoClassifier:
        backbone = nn.Sequential(
            nn.Conv3d(3, 16, 3, padding=1, bias=False),
            nn.BatchNorm3d(16),
            nn.ReLU(inplace=True),
            nn.MaxPool3d((1, 2, 2)),
            nn.Conv3d(16, 32, 3, padding=1, bias=False),
            nn.BatchNorm3d(32),
            nn.ReLU(inplace=True),
            nn.MaxPool3d((1, 2, 2)),
            nn.Conv3d(32, 64, 3, padding=1, bias=False),
            nn.BatchNorm3d(64),
            nn.ReLU(inplace=True),
            nn.MaxPool3d(2),
            nn.Conv3d(64, 128, 3, padding=1, bias=False),
            nn.BatchNorm3d(128),
            nn.ReLU(inplace=True),
        )
        head = nn.Sequential(
            nn.Dropout(config.dropout_rate),
            nn.Linear(128, config.n_classes),
        )
        if config.pretrained_backbone:
            path = Path(config.backbone_weights or "weights/video3d_backbone.pt")
            if path.exists():
                backbone.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
            else:
                warnings.warn(
                    f"video backbone weights missing at {path}; using random initialization",
                    stacklevel=2,
                )
        model = VideoClassifier(config, backbone, head)
        model.apply_freeze()
        model.eval()
        return model

    if seed is None:
        return build()
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return build()


# -- inference entry points ----------------------------------------------


def predict_proba(model: BaseClassifier, batch: np.ndarray | torch.Tensor) -> np.ndarray:
    """Probability matrix for a batch; rows sum to 1, inference is deterministic."""
    if isinstance(batch, np.ndarray) and batch.shape[0] == 0:
        raise ValidationError("empty batch")
    model.eval()
    with torch.no_grad():
        probs = torch.softmax(model.logits(batch), dim=1)
    return probs.numpy().astype(np.float64)


def predict_with_features(
    model: BaseClassifier, batch: np.ndarray | torch.Tensor
) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities plus last-conv feature maps, laid out (B, H, W, C)."""
    if not isinstance(model, FrameClassifier):
        raise UnsupportedOperationError(
            f"{model.config.arch} has no spatial feature maps"
        )
    model.eval()
    with torch.no_grad():
        x = model.prepare_batch(batch)
        feats = model.conv_features(x)
        pooled = torch.flatten(model.pool(feats), 1)
        probs = torch.softmax(model.head(pooled), dim=1)
    return (
        probs.numpy().astype(np.float64),
        feats.permute(0, 2, 3, 1).numpy().astype(np.float64),
    )


def _enable_dropout(model: nn.Module) -> None:
    for module in model.modules():
        if isinstance(module, (nn.Dropout, nn.Dropout2d, nn.Dropout3d)):
            module.train()


def stochastic_forward(
    model: BaseClassifier,
    batch: np.ndarray,
    n_passes: int = 10,
    mode: str = "dropout",
    policy: AugmentationPolicy | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Stack of ``n_passes`` probability matrices from a stochastic model pass.

    ``mode="dropout"`` keeps dropout layers sampling at inference time;
    ``mode="tta"`` perturbs the inputs with the training augmentation policy
    and keeps the model deterministic.  Both are fully determined by ``seed``.
    """
    if n_passes < 2:
        raise ConfigError("n_passes must be >= 2 (a standard deviation needs it)")
    if mode not in ("dropout", "tta"):
        raise ConfigError(f"unknown stochastic mode {mode!r}")

    stacks = []
    if mode == "dropout":
        model.eval()
        _enable_dropout(model)
        try:
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                with torch.no_grad():
                    for _ in range(n_passes):
                        probs = torch.softmax(model.logits(batch), dim=1)
                        stacks.append(probs.numpy().astype(np.float64))
        finally:
            model.eval()
    else:
        if policy is None:
            raise ConfigError("tta mode needs an augmentation policy")
        batch = np.asarray(batch)
        if batch.ndim != 4:
            raise UnsupportedOperationError(
                "tta mode transforms image batches; this input has no spatial axes"
            )
        for i in range(n_passes):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
            transformed = np.stack(
                [apply_transform(frame, draw_transform(policy, rng)) for frame in batch]
            )
            stacks.append(predict_proba(model, transformed))
    return np.stack(stacks)


# -- video chunking --------------------------------------------------------


@dataclass(frozen=True)
class VideoChunk:
    """A run of consecutive preprocessed frames from one video."""

    video_id: str
    chunk_index: int
    frames: np.ndarray  # (chunk_len, 224, 224, 3)

    def __post_init__(self) -> None:
        if self.frames.ndim != 4 or self.frames.shape[1:] != (224, 224, 3):
            raise ValidationError("chunk frames must be (T, 224, 224, 3)")


def chunk_video(
    rec: RecordingMeta,
    target_hz: float = 5.0,
    chunk_len: int = 5,
) -> list[VideoChunk]:
    """Split a video into consecutive, non-overlapping preprocessed chunks.

    Trailing frames that do not fill a chunk are dropped; a video shorter
    than one chunk yields an empty list with a warning.
    """
    raw = extract_frames(rec, target_hz=target_hz, max_frames=None)
    frames = [preprocess(crop_square(f.pixels, rec.crop)) for f in raw]
    n_chunks = len(frames) // chunk_len
    if n_chunks == 0:
        warnings.warn(
            f"video {rec.id!r} has only {len(frames)} sampled frames; "
            f"too short for a {chunk_len}-frame chunk",
            stacklevel=2,
        )
        return []
    return [
        VideoChunk(
            video_id=rec.id,
            chunk_index=i,
            frames=np.stack(frames[i * chunk_len:(i + 1) * chunk_len]),
        )
        for i in range(n_chunks)
    ]


# -- segment-encoding feature files ----------------------------------------


def save_segment_features(features: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(features, dtype="<f4")
    if arr.shape != (SEGMENT_FEATURE_DIM,):
        raise ValidationError(f"segment features must have length {SEGMENT_FEATURE_DIM}")
    if not np.isfinite(arr).all():
        raise ValidationError("segment features must be finite")
    Path(path).write_bytes(arr.tobytes())


def load_segment_features(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    arr = np.frombuffer(raw, dtype="<f4")
    if arr.shape != (SEGMENT_FEATURE_DIM,):
        raise ValidationError(
            f"{path}: expected {SEGMENT_FEATURE_DIM} little-endian float32 values, "
            f"got {arr.size}"
        )
    if not np.isfinite(arr).all():
        raise ValidationError(f"{path}: non-finite feature values")
    return arr.astype(np.float32)


# -- parameter accounting and checkpoints -----------------------------------


def parameter_counts(model: nn.Module) -> dict[str, int]:
    total = sum(p.numel() for p in model.parameters())
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    return {"total": total, "trainable": trainable, "frozen": total - trainable}


def checkpoint_path(ckpt_dir: str | Path, arch: str, fold: int) -> Path:
    return Path(ckpt_dir) / f"{arch}_fold{fold}.bin"


def save_checkpoint(model: BaseClassifier, path: str | Path, sidecar: dict | None = None) -> Path:
    """Atomically write weights plus a JSON sidecar describing the run."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(model.state_dict(), tmp)
    tmp.replace(path)

    meta = {"arch": model.config.arch, "config": model.config.to_dict()}
    meta.update(sidecar or {})
    sidecar_path = path.with_suffix(".json")
    tmp_side = sidecar_path.with_suffix(".json.tmp")
    tmp_side.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    tmp_side.replace(sidecar_path)
    return path


def load_checkpoint(path: str | Path) -> tuple[BaseClassifier, dict]:
    """Rebuild the model recorded in a checkpoint's sidecar and load weights."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.exists():
        raise FileNotFoundError(f"checkpoint sidecar not found: {sidecar_path}")
    meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
    config = ClassifierConfig.from_dict(meta["config"])
    if config.arch == "video3d":
        model: BaseClassifier = build_video_classifier(config)
    else:
        model = build_frame_classifier(config)
    model.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
    model.eval()
    return model, meta
