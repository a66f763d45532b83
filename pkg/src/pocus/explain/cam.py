"""Class activation heatmaps, max-activation points and review artifacts.

Plain CAM weighs the last convolutional maps by the final dense weights of a
GAP head; Grad-CAM generalizes it by averaging the gradient of the class
logit over space.  Both rectify at zero, then upsample bilinearly to the
input resolution.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch

from ..data import IMAGE_SIZE
from ..errors import UnsupportedOperationError, ValidationError
from ..models import FrameClassifier


@dataclass
class Heatmap:
    """A non-negative 224x224 activation grid for one class."""

    grid: np.ndarray
    class_id: int
    source: str  # "cam" | "grad_cam"
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.grid.shape != (IMAGE_SIZE, IMAGE_SIZE):
            raise ValidationError(f"heatmap grid must be {IMAGE_SIZE}x{IMAGE_SIZE}")
        if not np.isfinite(self.grid).all():
            raise ValidationError("heatmap contains non-finite values")

    @property
    def is_zero(self) -> bool:
        return "zero_map" in self.flags


@dataclass(frozen=True)
class CamPoint:
    """Pixel coordinates of a heatmap's maximal activation."""

    x: int
    y: int
    video_id: str = ""
    frame_index: int = 0
    class_id: int = 0
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not (0 <= self.x < IMAGE_SIZE and 0 <= self.y < IMAGE_SIZE):
            raise ValidationError(f"point ({self.x}, {self.y}) outside the image")


@dataclass
class CamPointSet:
    """All max-activation coordinates observed for one class."""

    label: str
    points: list[CamPoint] = field(default_factory=list)

    def coords(self) -> np.ndarray:
        if not self.points:
            raise ValidationError(f"point set {self.label!r} is empty")
        return np.array([[p.x, p.y] for p in self.points], dtype=np.float64)


def _interp_axis(values: np.ndarray, centers: np.ndarray, size: int) -> np.ndarray:
    """Linear interpolation along the last axis, clamped beyond the centers.

    Written as v_left + t * (v_right - v_left) so equal neighbors reproduce
    their value bit-exactly.
    """
    query = np.clip(np.arange(size), centers[0], centers[-1])
    idx = np.clip(np.searchsorted(centers, query, side="right") - 1,
                  0, len(centers) - 2)
    t = (query - centers[idx]) / (centers[idx + 1] - centers[idx])
    left = values[..., idx]
    return left + t * (values[..., idx + 1] - left)


def upsample_bilinear(low_res: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Bilinear upsampling with cell centers pinned to integer pixels.

    Each low-res sample lands exactly on its (rounded) center pixel and every
    other pixel is a convex combination of neighbors, so the upsampled argmax
    stays inside the pixel footprint of the low-res argmax cell.
    """
    h, w = low_res.shape
    if h < 1 or w < 1 or h > size or w > size:
        raise ValidationError(f"cannot upsample a {h}x{w} map to {size}x{size}")
    cy = np.round((np.arange(h) + 0.5) * (size / h) - 0.5).astype(np.int64)
    cx = np.round((np.arange(w) + 0.5) * (size / w) - 0.5).astype(np.int64)
    if h == 1:
        rows = np.repeat(low_res, size, axis=0)
    else:
        rows = _interp_axis(low_res.T, cy, size).T  # (size, w)
    if w == 1:
        return np.repeat(rows, size, axis=1)
    return _interp_axis(rows, cx, size)  # (size, size)


def _finish_map(low_res: np.ndarray, class_id: int, source: str) -> Heatmap:
    """Rectify a low-resolution map and upsample it to the input size."""
    rectified = np.maximum(np.asarray(low_res, dtype=np.float64), 0.0)
    flags = ("zero_map",) if rectified.max() <= 0.0 else ()
    return Heatmap(grid=upsample_bilinear(rectified), class_id=class_id,
                   source=source, flags=flags)


def cam(model: FrameClassifier, image: np.ndarray, class_id: int) -> Heatmap:
    """Plain class activation map; needs a GAP head with a single dense layer."""
    weights = model.cam_weights() if isinstance(model, FrameClassifier) else None
    if weights is None:
        raise UnsupportedOperationError(
            "plain CAM needs a global-average-pooling head with one dense layer; "
            "use grad_cam for this model"
        )
    if not 0 <= class_id < model.config.n_classes:
        raise ValidationError(f"class_id {class_id} out of range")
    model.eval()
    with torch.no_grad():
        maps = model.conv_features(model.prepare_batch(image[None]))[0]  # (C, h, w)
        w = weights[class_id].view(-1, 1, 1)
        low_res = (w * maps).sum(dim=0).numpy()
    return _finish_map(low_res, class_id, "cam")


def grad_cam(
    model: FrameClassifier,
    image: np.ndarray,
    class_id: int,
    target_layer: torch.nn.Module | None = None,
) -> Heatmap:
    """Gradient-weighted class activation map on the class logit.

    Channel weights are the spatial mean of the logit's gradient at the
    target layer; an everywhere-zero gradient yields a flagged zero map.
    """
    if not isinstance(model, FrameClassifier):
        raise UnsupportedOperationError(f"{model.config.arch} has no spatial feature maps")
    if not 0 <= class_id < model.config.n_classes:
        raise ValidationError(f"class_id {class_id} out of range")
    layer = target_layer if target_layer is not None else model.cam_target

    captured: dict[str, torch.Tensor] = {}

    def forward_hook(_module, _inputs, output):
        captured["activations"] = output

    handle = layer.register_forward_hook(forward_hook)
    try:
        model.eval()
        x = model.prepare_batch(image[None])
        # Gradients must flow even when every layer is frozen.
        x.requires_grad_(True)
        logits = model(x)
        score = logits[0, class_id]
        activations = captured["activations"]
        if activations.requires_grad:
            grads = torch.autograd.grad(score, activations, retain_graph=False,
                                        allow_unused=True)[0]
        else:
            grads = None  # activations constant w.r.t. the input: zero gradient
    finally:
        handle.remove()

    acts = activations.detach()[0]
    if grads is None:
        low_res = np.zeros(acts.shape[1:], dtype=np.float64)
    else:
        alpha = grads.detach()[0].mean(dim=(1, 2)).view(-1, 1, 1)
        low_res = (alpha * acts).sum(dim=0).numpy()
    return _finish_map(low_res, class_id, "grad_cam")


def max_activation_point(
    hm: Heatmap,
    video_id: str = "",
    frame_index: int = 0,
) -> CamPoint:
    """Coordinates of the global maximum; raster order breaks ties.

    A constant map (including a flagged zero map) degenerates to (0, 0) and
    carries a ``uniform`` flag.
    """
    grid = hm.grid
    flags: tuple[str, ...] = ()
    if grid.max() == grid.min():
        flags = ("uniform",)
        y, x = 0, 0
    else:
        y, x = np.unravel_index(int(np.argmax(grid)), grid.shape)
    return CamPoint(x=int(x), y=int(y), video_id=video_id,
                    frame_index=frame_index, class_id=hm.class_id, flags=flags)


def overlay(image: np.ndarray, hm: Heatmap, alpha: float = 0.4) -> np.ndarray:
    """Blend a color-mapped heatmap over an RGB image in [0, 1].

    alpha 0 returns the image; alpha 1 the pure colormap; in between a
    pixelwise convex combination.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError("alpha must be in [0, 1]")
    if image.shape[:2] != hm.grid.shape:
        raise ValidationError("image and heatmap shapes differ")
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)

    peak = hm.grid.max()
    norm = hm.grid / peak if peak > 0 else np.zeros_like(hm.grid)
    colored_bgr = cv2.applyColorMap((norm * 255).astype(np.uint8), cv2.COLORMAP_JET)
    colored = cv2.cvtColor(colored_bgr, cv2.COLOR_BGR2RGB).astype(np.float64) / 255.0
    return (1.0 - alpha) * image.astype(np.float64) + alpha * colored


POINTS_CSV_HEADER = ["video_id", "frame_index", "class", "x", "y"]


def save_points_csv(point_sets: list[CamPointSet], path: str | Path) -> None:
    """CAM coordinates as ``video_id,frame_index,class,x,y`` rows."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(POINTS_CSV_HEADER)
        for pset in point_sets:
            for p in pset.points:
                writer.writerow([p.video_id, p.frame_index, pset.label, p.x, p.y])


def load_points_csv(path: str | Path) -> list[CamPointSet]:
    sets: dict[str, CamPointSet] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in POINTS_CSV_HEADER if c not in (reader.fieldnames or [])]
        if missing:
            raise ValidationError(f"points CSV missing columns: {missing}")
        for row in reader:
            label = row["class"]
            sets.setdefault(label, CamPointSet(label=label)).points.append(
                CamPoint(x=int(row["x"]), y=int(row["y"]),
                         video_id=row["video_id"], frame_index=int(row["frame_index"]))
            )
    return list(sets.values())


def cam_scatter_export(point_sets: list[CamPointSet], out_dir: str | Path) -> dict[str, Path]:
    """Write the coordinates CSV plus scatter and per-class density images."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, Path] = {}

    populated = []
    for pset in point_sets:
        if pset.points:
            populated.append(pset)
        else:
            warnings.warn(f"class {pset.label!r} has no points; layer omitted", stacklevel=2)

    csv_path = out / "cam_points.csv"
    save_points_csv(populated, csv_path)
    artifacts["points_csv"] = csv_path

    fig, ax = plt.subplots(figsize=(5, 5))
    for pset in populated:
        coords = pset.coords()
        ax.scatter(coords[:, 0], coords[:, 1], s=8, alpha=0.6, label=pset.label)
    ax.set(xlim=(0, IMAGE_SIZE), ylim=(IMAGE_SIZE, 0),
           xlabel="x", ylabel="y", title="Max-activation points")
    ax.legend()
    scatter_path = out / "cam_scatter.png"
    fig.savefig(scatter_path, dpi=120)
    plt.close(fig)
    artifacts["scatter"] = scatter_path

    for pset in populated:
        coords = pset.coords()
        hist, _, _ = np.histogram2d(
            coords[:, 1], coords[:, 0],
            bins=28, range=[[0, IMAGE_SIZE], [0, IMAGE_SIZE]],
        )
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(hist, cmap="magma", extent=(0, IMAGE_SIZE, IMAGE_SIZE, 0))
        ax.set(title=f"Density: {pset.label}", xlabel="x", ylabel="y")
        density_path = out / f"cam_density_{pset.label}.png"
        fig.savefig(density_path, dpi=120)
        plt.close(fig)
        artifacts[f"density_{pset.label}"] = density_path

    return artifacts


def export_review_bundle(
    video_id: str,
    frames: np.ndarray,
    heatmaps: list[Heatmap],
    predictions: list[dict],
    out_dir: str | Path,
    alpha: float = 0.4,
) -> Path:
    """Per-video review directory: originals, overlays and prediction JSON."""
    if not (len(frames) == len(heatmaps) == len(predictions)):
        raise ValidationError("frames, heatmaps and predictions must align")
    bundle = Path(out_dir) / video_id
    bundle.mkdir(parents=True, exist_ok=True)
    for i, (frame, hm) in enumerate(zip(frames, heatmaps)):
        original = cv2.cvtColor((frame * 255).astype(np.uint8), cv2.COLOR_RGB2BGR)
        cv2.imwrite(str(bundle / f"frame{i:03d}.png"), original)
        blended = overlay(frame, hm, alpha)
        blended_bgr = cv2.cvtColor((blended * 255).astype(np.uint8), cv2.COLOR_RGB2BGR)
        cv2.imwrite(str(bundle / f"frame{i:03d}_overlay.png"), blended_bgr)
    (bundle / "predictions.json").write_text(
        json.dumps({"video_id": video_id, "frames": predictions}, indent=2) + "\n",
        encoding="utf-8",
    )
    return bundle
