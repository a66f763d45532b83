"""Shared fixtures: synthetic videos, images, manifests and tiny models."""

from __future__ import annotations

import csv
from pathlib import Path

import cv2
import numpy as np
import pytest
import torch
from torch import nn

from pocus.data import (
    FrameDataset,
    FrameSample,
    Label,
    MediaKind,
    Probe,
    RecordingMeta,
)
from pocus.models import ClassifierConfig, FrameClassifier


def write_video(path: Path, fps: float, n_frames: int, size: int = 64,
                seed: int = 0) -> Path:
    """Write a random-noise mp4 with an exact frame count."""
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (size, size))
    assert writer.isOpened(), "mp4v writer unavailable"
    rng = np.random.default_rng(seed)
    for _ in range(n_frames):
        writer.write(rng.integers(0, 255, (size, size, 3), dtype=np.uint8))
    writer.release()
    return path


def write_image(path: Path, size: tuple[int, int] = (64, 64), seed: int = 0) -> Path:
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 255, (size[1], size[0], 3), dtype=np.uint8)
    assert cv2.imwrite(str(path), img)
    return path


def video_meta(rec_id: str, path: Path, fps: float, label: Label = Label.COVID,
               probe: Probe = Probe.CONVEX) -> RecordingMeta:
    return RecordingMeta(id=rec_id, path=path, label=label, probe=probe,
                         kind=MediaKind.VIDEO, fps=fps)


def image_meta(rec_id: str, path: Path, label: Label = Label.HEALTHY,
               probe: Probe = Probe.CONVEX) -> RecordingMeta:
    return RecordingMeta(id=rec_id, path=path, label=label, probe=probe,
                         kind=MediaKind.IMAGE)


def write_manifest(path: Path, rows: list[dict]) -> Path:
    columns = ["id", "path", "label", "probe", "kind", "source",
               "fps", "crop_x", "crop_y", "crop_w", "crop_h", "notes"]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})
    return path


def synthetic_dataset(video_frame_counts: dict[str, tuple[Label, int]],
                      seed: int = 0, shared_pixels: bool = True) -> FrameDataset:
    """In-memory dataset with random pixels; no codecs involved.

    With ``shared_pixels`` every frame aliases one buffer — fine for tests
    that only look at ids, labels and counts.
    """
    rng = np.random.default_rng(seed)
    buffer = rng.random((224, 224, 3)).astype(np.float32)
    samples = []
    for video_id, (label, n_frames) in video_frame_counts.items():
        for idx in range(n_frames):
            pixels = buffer if shared_pixels else rng.random((224, 224, 3)).astype(np.float32)
            samples.append(FrameSample(video_id, idx, pixels, label))
    return FrameDataset(samples)


def tiny_frame_classifier(n_classes: int = 4, seed: int = 0,
                          dropout: float = 0.0,
                          trainable_tail_layers: int = 99) -> FrameClassifier:
    """A very small GAP-head classifier for fast training tests."""
    config = ClassifierConfig(arch="mobile", n_classes=n_classes,
                              dropout_rate=dropout,
                              trainable_tail_layers=trainable_tail_layers)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        backbone = nn.Sequential(
            nn.Conv2d(3, 8, 7, stride=8, padding=3, bias=False),
            nn.BatchNorm2d(8),
            nn.ReLU(inplace=True),
            nn.Conv2d(8, 16, 3, stride=4, padding=1, bias=False),
            nn.BatchNorm2d(16),
            nn.ReLU(inplace=True),
        )
        head = nn.Sequential(nn.Dropout(dropout), nn.Linear(16, n_classes))
        model = FrameClassifier(config, backbone, head, 16)
    model.apply_freeze()
    model.eval()
    return model


@pytest.fixture(scope="session")
def video_30fps_5s(tmp_path_factory) -> Path:
    return write_video(tmp_path_factory.mktemp("vid") / "v5s.mp4", 30.0, 150)


@pytest.fixture(scope="session")
def video_30fps_12s(tmp_path_factory) -> Path:
    return write_video(tmp_path_factory.mktemp("vid") / "v12s.mp4", 30.0, 360)
