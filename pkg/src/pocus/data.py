"""Turn heterogeneous ultrasound recordings into a clean, labeled frame dataset.

Recordings are described by a CSV manifest (one row per video or still image).
Videos are sampled at a low frame rate, cropped to a square ultrasound window,
resized to the network input size and normalized to [0, 1].  Augmentation is
seeded and reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import cv2
import numpy as np

from .errors import ConfigError, SchemaError, ValidationError

IMAGE_SIZE = 224

MANIFEST_COLUMNS = (
    "id", "path", "label", "probe", "kind", "source",
    "fps", "crop_x", "crop_y", "crop_w", "crop_h", "notes",
)


class Label(str, Enum):
    COVID = "covid"
    PNEUMONIA = "pneumonia"
    HEALTHY = "healthy"
    UNINFORMATIVE = "uninformative"


#: Canonical class order used for every probability vector in the toolkit.
CLASS_ORDER: tuple[Label, ...] = (
    Label.COVID, Label.PNEUMONIA, Label.HEALTHY, Label.UNINFORMATIVE,
)
CLASS_NAMES: tuple[str, ...] = tuple(label.value for label in CLASS_ORDER)


def class_index(label: Label | str) -> int:
    return CLASS_NAMES.index(Label(label).value)


class Probe(str, Enum):
    CONVEX = "convex"
    LINEAR = "linear"


class MediaKind(str, Enum):
    VIDEO = "video"
    IMAGE = "image"


@dataclass(frozen=True)
class RecordingMeta:
    """One source recording: a video or a still image with its provenance."""

    id: str
    path: Path
    label: Label
    probe: Probe
    kind: MediaKind
    source: str = ""
    fps: float | None = None
    crop: tuple[int, int, int, int] | None = None  # (x, y, w, h); None = centered
    notes: str = ""

    def __post_init__(self) -> None:
        if self.kind is MediaKind.VIDEO:
            if self.fps is None or self.fps <= 0:
                raise ValidationError(f"recording {self.id!r}: videos need fps > 0")
        elif self.fps is not None:
            raise ValidationError(f"recording {self.id!r}: fps only applies to videos")
        if self.crop is not None and self.crop[2] != self.crop[3]:
            raise ValidationError(f"recording {self.id!r}: crop window must be square")


@dataclass
class FrameSample:
    """A preprocessed frame: 224x224x3 pixels in [0, 1], bound to its video."""

    video_id: str
    frame_index: int
    pixels: np.ndarray
    label: Label

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValidationError("frame_index must be non-negative")
        px = self.pixels
        if px.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise ValidationError(
                f"pixels must be {IMAGE_SIZE}x{IMAGE_SIZE}x3, got {px.shape}"
            )
        lo, hi = float(px.min()), float(px.max())
        if lo < 0.0 or hi > 1.0:
            raise ValidationError(f"pixel values outside [0, 1]: min={lo}, max={hi}")


@dataclass(frozen=True)
class AugmentationPolicy:
    """Random flips, small rotations and translations; fully seed-determined."""

    h_flip: bool = True
    v_flip: bool = True
    max_rotation_deg: float = 10.0
    max_translation_frac: float = 0.10
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.max_rotation_deg <= 10.0:
            raise ValidationError("max_rotation_deg must be in [0, 10]")
        if not 0.0 <= self.max_translation_frac <= 0.10:
            raise ValidationError("max_translation_frac must be in [0, 0.10]")

    @classmethod
    def identity(cls, rng_seed: int = 0) -> "AugmentationPolicy":
        return cls(h_flip=False, v_flip=False, max_rotation_deg=0.0,
                   max_translation_frac=0.0, rng_seed=rng_seed)


@dataclass(frozen=True)
class TransformParams:
    """One concrete draw from an AugmentationPolicy."""

    h_flip: bool = False
    v_flip: bool = False
    rotation_deg: float = 0.0
    shift_x_frac: float = 0.0
    shift_y_frac: float = 0.0


@dataclass(frozen=True)
class RawFrame:
    """A decoded video frame before preprocessing (RGB, uint8)."""

    index: int
    timestamp_s: float
    pixels: np.ndarray


def _parse_row(row: Mapping[str, str], line_no: int) -> RecordingMeta:
    rec_id = row["id"].strip()
    if not rec_id:
        raise ValidationError(f"manifest row {line_no}: empty id")
    try:
        label = Label(row["label"].strip().lower())
    except ValueError:
        raise ValidationError(
            f"manifest row {line_no}: unknown label {row['label']!r} "
            f"(expected one of {[l.value for l in Label]})"
        ) from None
    try:
        probe = Probe(row["probe"].strip().lower())
    except ValueError:
        raise ValidationError(
            f"manifest row {line_no}: unknown probe {row['probe']!r}"
        ) from None
    try:
        kind = MediaKind(row["kind"].strip().lower())
    except ValueError:
        raise ValidationError(
            f"manifest row {line_no}: unknown kind {row['kind']!r}"
        ) from None

    fps_field = (row.get("fps") or "").strip()
    fps = float(fps_field) if fps_field else None

    crop_fields = [(row.get(k) or "").strip() for k in ("crop_x", "crop_y", "crop_w", "crop_h")]
    if any(crop_fields):
        if not all(crop_fields):
            raise ValidationError(
                f"manifest row {line_no}: crop columns must be all set or all empty"
            )
        crop = tuple(int(v) for v in crop_fields)
    else:
        crop = None

    try:
        return RecordingMeta(
            id=rec_id,
            path=Path(row["path"].strip()),
            label=label,
            probe=probe,
            kind=kind,
            source=(row.get("source") or "").strip(),
            fps=fps,
            crop=crop,  # type: ignore[arg-type]
            notes=(row.get("notes") or "").strip(),
        )
    except ValidationError as exc:
        raise ValidationError(f"manifest row {line_no}: {exc}") from None


def load_manifest(path: str | Path) -> list[RecordingMeta]:
    """Parse a recording manifest CSV into a list of RecordingMeta.

    Raises SchemaError when a required column is missing and ValidationError
    (with the row number) for bad values or duplicate ids.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"manifest {path} is missing columns: {', '.join(missing)}")
        records = [_parse_row(row, line_no) for line_no, row in enumerate(reader, start=2)]

    seen: set[str] = set()
    for rec in records:
        if rec.id in seen:
            raise ValidationError(f"duplicate recording id {rec.id!r} in manifest")
        seen.add(rec.id)
    return records


def extract_frames(
    rec: RecordingMeta,
    target_hz: float = 3.0,
    max_frames: int | None = 30,
) -> list[RawFrame]:
    """Sample frames from a video at roughly ``target_hz``.

    The stride between kept frames is round(fps / target_hz); the first frame
    kept is index 0 and at most ``max_frames`` frames are returned.
    """
    if rec.kind is not MediaKind.VIDEO:
        raise ValidationError(f"recording {rec.id!r} is not a video")
    assert rec.fps is not None
    if target_hz <= 0:
        raise ConfigError("target_hz must be > 0")
    if rec.fps < target_hz:
        raise ConfigError(
            f"recording {rec.id!r}: fps {rec.fps} below target rate {target_hz}"
        )

    stride = max(1, round(rec.fps / target_hz))
    cap = cv2.VideoCapture(str(rec.path))
    if not cap.isOpened():
        raise IOError(f"cannot open video {rec.path}")
    frames: list[RawFrame] = []
    try:
        index = 0
        while max_frames is None or len(frames) < max_frames:
            ok, frame = cap.read()
            if not ok:
                break
            if index % stride == 0:
                rgb = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
                frames.append(RawFrame(index=index, timestamp_s=index / rec.fps, pixels=rgb))
            index += 1
    finally:
        cap.release()
    return frames


def crop_square(frame: np.ndarray, window: tuple[int, int, int, int] | None = None) -> np.ndarray:
    """Crop to a square window; defaults to the largest centered square."""
    if frame.size == 0:
        raise ValidationError("empty frame")
    h, w = frame.shape[:2]
    if window is None:
        side = min(h, w)
        y0 = (h - side) // 2
        x0 = (w - side) // 2
        return frame[y0:y0 + side, x0:x0 + side]
    x, y, cw, ch = window
    if cw != ch:
        raise ValidationError(f"crop window must be square, got {cw}x{ch}")
    if cw <= 0 or x < 0 or y < 0 or x + cw > w or y + ch > h:
        raise ValidationError(
            f"crop window {window} outside frame of size {w}x{h}"
        )
    return frame[y:y + ch, x:x + cw]


def preprocess(frame: np.ndarray) -> np.ndarray:
    """Resize a square crop to 224x224x3 float32 in [0, 1].

    Grayscale inputs are replicated to 3 channels.  Downsampling uses area
    averaging to limit speckle aliasing.
    """
    if frame.size == 0:
        raise ValidationError("empty image")
    if frame.ndim == 2:
        frame = np.repeat(frame[:, :, None], 3, axis=2)
    elif frame.ndim == 3 and frame.shape[2] == 1:
        frame = np.repeat(frame, 3, axis=2)
    elif frame.ndim != 3 or frame.shape[2] != 3:
        raise ValidationError(f"expected HxW or HxWx3 image, got shape {frame.shape}")

    h, w = frame.shape[:2]
    interp = cv2.INTER_AREA if min(h, w) >= IMAGE_SIZE else cv2.INTER_LINEAR
    resized = cv2.resize(frame, (IMAGE_SIZE, IMAGE_SIZE), interpolation=interp)

    pixels = resized.astype(np.float32)
    if frame.dtype == np.uint8:
        pixels /= 255.0
    return np.clip(pixels, 0.0, 1.0)


def draw_transform(policy: AugmentationPolicy, rng: np.random.Generator) -> TransformParams:
    """Sample concrete transform parameters from a policy."""
    return TransformParams(
        h_flip=bool(policy.h_flip and rng.random() < 0.5),
        v_flip=bool(policy.v_flip and rng.random() < 0.5),
        rotation_deg=float(rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg))
        if policy.max_rotation_deg > 0 else 0.0,
        shift_x_frac=float(rng.uniform(-policy.max_translation_frac, policy.max_translation_frac))
        if policy.max_translation_frac > 0 else 0.0,
        shift_y_frac=float(rng.uniform(-policy.max_translation_frac, policy.max_translation_frac))
        if policy.max_translation_frac > 0 else 0.0,
    )


def apply_transform(pixels: np.ndarray, params: TransformParams) -> np.ndarray:
    """Apply flips, rotation and translation; shape and value range preserved."""
    out = pixels
    if params.h_flip:
        out = out[:, ::-1]
    if params.v_flip:
        out = out[::-1, :]
    if params.rotation_deg != 0.0 or params.shift_x_frac != 0.0 or params.shift_y_frac != 0.0:
        h, w = out.shape[:2]
        matrix = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), params.rotation_deg, 1.0)
        matrix[0, 2] += params.shift_x_frac * w
        matrix[1, 2] += params.shift_y_frac * h
        # Replicated borders avoid introducing artificial dark wedges.
        out = cv2.warpAffine(
            np.ascontiguousarray(out), matrix, (w, h),
            flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE,
        )
    return np.clip(np.ascontiguousarray(out), 0.0, 1.0)


def augment(
    sample: FrameSample,
    policy: AugmentationPolicy,
    rng: np.random.Generator | None = None,
) -> FrameSample:
    """Return an augmented copy of ``sample``; label and shape are unchanged.

    Without an explicit generator the draw is seeded from the policy, so
    repeated calls produce bit-identical output.
    """
    if rng is None:
        rng = np.random.default_rng(policy.rng_seed)
    params = draw_transform(policy, rng)
    return replace(sample, pixels=apply_transform(sample.pixels, params))


class FrameDataset:
    """An immutable collection of FrameSamples grouped by source video."""

    def __init__(self, samples: Sequence[FrameSample]):
        self._samples = tuple(samples)

    def __len__(self) -> int:
        return len(self._samples)

    def __iter__(self) -> Iterator[FrameSample]:
        return iter(self._samples)

    def __getitem__(self, i: int) -> FrameSample:
        return self._samples[i]

    @property
    def samples(self) -> tuple[FrameSample, ...]:
        return self._samples

    def class_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in CLASS_NAMES}
        for s in self._samples:
            counts[s.label.value] += 1
        return {k: v for k, v in counts.items() if v}

    def by_video(self) -> dict[str, list[FrameSample]]:
        groups: dict[str, list[FrameSample]] = {}
        for s in self._samples:
            groups.setdefault(s.video_id, []).append(s)
        return groups

    def video_labels(self) -> dict[str, Label]:
        labels: dict[str, Label] = {}
        for s in self._samples:
            prev = labels.setdefault(s.video_id, s.label)
            if prev is not s.label:
                raise ValidationError(
                    f"video {s.video_id!r} carries mixed labels {prev.value}/{s.label.value}"
                )
        return labels

    def pixel_array(self) -> np.ndarray:
        return np.stack([s.pixels for s in self._samples])

    def label_indices(self) -> np.ndarray:
        return np.array([class_index(s.label) for s in self._samples], dtype=np.int64)


def _load_image(path: Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise IOError(f"cannot read image {path}")
    if img.ndim == 3 and img.shape[2] >= 3:
        img = cv2.cvtColor(img[:, :, :3], cv2.COLOR_BGR2RGB)
    return img


def build_dataset(
    manifest: Sequence[RecordingMeta],
    target_hz: float = 3.0,
    max_frames: int | None = 30,
    include_uninformative: bool = False,
) -> FrameDataset:
    """Extract, crop and preprocess every convex-probe recording in a manifest.

    Only convex-probe data enters the dataset; still images pass through
    without frame extraction.  The result is deterministic given the manifest
    and parameters.
    """
    samples: list[FrameSample] = []
    for rec in manifest:
        if rec.probe is not Probe.CONVEX:
            continue
        if rec.label is Label.UNINFORMATIVE and not include_uninformative:
            continue
        if rec.kind is MediaKind.VIDEO:
            for raw in extract_frames(rec, target_hz=target_hz, max_frames=max_frames):
                pixels = preprocess(crop_square(raw.pixels, rec.crop))
                samples.append(FrameSample(rec.id, raw.index, pixels, rec.label))
        else:
            pixels = preprocess(crop_square(_load_image(rec.path), rec.crop))
            samples.append(FrameSample(rec.id, 0, pixels, rec.label))
    if not samples:
        raise ValidationError("no convex-probe recordings produced any frames")
    return FrameDataset(samples)


def frame_cache_path(root: Path, sample: FrameSample) -> Path:
    return root / sample.label.value / f"{sample.video_id}_frame{sample.frame_index:03d}.png"


def save_frame_cache(dataset: FrameDataset, root: str | Path) -> list[Path]:
    """Write the dataset as PNGs under ``frames/{label}/{video}_frame{idx}.png``."""
    root = Path(root)
    written = []
    for sample in dataset:
        path = frame_cache_path(root, sample)
        path.parent.mkdir(parents=True, exist_ok=True)
        bgr = cv2.cvtColor((sample.pixels * 255.0).round().astype(np.uint8), cv2.COLOR_RGB2BGR)
        if not cv2.imwrite(str(path), bgr):
            raise IOError(f"failed to write {path}")
        written.append(path)
    return written


def load_frame_cache(root: str | Path) -> FrameDataset:
    """Rebuild a FrameDataset from a frame-cache directory."""
    root = Path(root)
    samples: list[FrameSample] = []
    for label in Label:
        class_dir = root / label.value
        if not class_dir.is_dir():
            continue
        for path in sorted(class_dir.glob("*_frame*.png")):
            stem = path.stem
            video_id, _, idx = stem.rpartition("_frame")
            pixels = _load_image(path).astype(np.float32) / 255.0
            samples.append(FrameSample(video_id, int(idx), pixels, label))
    if not samples:
        raise ValidationError(f"no cached frames under {root}")
    return FrameDataset(samples)


def synthesize_manifest_row(rec: RecordingMeta) -> dict[str, str]:
    """Render a RecordingMeta back into manifest CSV fields."""
    crop = rec.crop or ("", "", "", "")
    return {
        "id": rec.id,
        "path": str(rec.path),
        "label": rec.label.value,
        "probe": rec.probe.value,
        "kind": rec.kind.value,
        "source": rec.source,
        "fps": "" if rec.fps is None else f"{rec.fps:g}",
        "crop_x": str(crop[0]), "crop_y": str(crop[1]),
        "crop_w": str(crop[2]), "crop_h": str(crop[3]),
        "notes": rec.notes,
    }


def save_manifest(records: Sequence[RecordingMeta], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS)
        writer.writeheader()
        for rec in records:
            writer.writerow(synthesize_manifest_row(rec))


def expected_frame_count(duration_s: float, fps: float, target_hz: float = 3.0,
                         max_frames: int | None = 30) -> int:
    """Frame count the 3 Hz sampling rule yields for a video of known length."""
    total = int(round(duration_s * fps))
    stride = max(1, round(fps / target_hz))
    kept = (total + stride - 1) // stride
    if max_frames is not None:
        kept = min(kept, max_frames)
    return kept
