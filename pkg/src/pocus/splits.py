"""Grouped, stratified cross-validation splits with a leakage audit.

All frames of a video stay in one fold.  Stratification balances per-class
frame counts across folds with a greedy largest-video-first assignment.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FrameDataset, Label
from .errors import SchemaError, ValidationError


@dataclass(frozen=True)
class FoldAssignment:
    """Maps every video id to exactly one fold index in [0, n_folds)."""

    n_folds: int
    mapping: dict[str, int]

    def __post_init__(self) -> None:
        if self.n_folds < 2:
            raise ValidationError("n_folds must be at least 2")
        bad = {v: f for v, f in self.mapping.items() if not 0 <= f < self.n_folds}
        if bad:
            raise ValidationError(f"fold indices out of range: {bad}")

    def videos_in_fold(self, fold: int) -> set[str]:
        return {v for v, f in self.mapping.items() if f == fold}

    def to_json(self) -> str:
        return json.dumps(
            {"n_folds": self.n_folds, "assignment": dict(sorted(self.mapping.items()))},
            indent=2, sort_keys=True,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FoldAssignment":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        try:
            return cls(n_folds=int(payload["n_folds"]),
                       mapping={str(k): int(v) for k, v in payload["assignment"].items()})
        except KeyError as exc:
            raise SchemaError(f"split file {path} is missing key {exc}") from None

    def split_hash(self) -> str:
        """Stable digest of the assignment, recorded in checkpoint sidecars."""
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def stratified_group_kfold(
    dataset: FrameDataset,
    n_folds: int = 5,
    seed: int = 0,
) -> FoldAssignment:
    """Assign whole videos to folds, balancing per-class frame counts.

    Videos are shuffled (seeded), then placed largest-first into the fold with
    the lowest running frame count for their class.  A class with fewer videos
    than folds triggers a warning and a best-effort assignment.
    """
    video_labels = dataset.video_labels()
    frame_counts = {vid: len(frames) for vid, frames in dataset.by_video().items()}

    per_class_videos: dict[Label, list[str]] = {}
    for vid, label in video_labels.items():
        per_class_videos.setdefault(label, []).append(vid)
    for label, vids in per_class_videos.items():
        if len(vids) < n_folds:
            warnings.warn(
                f"class {label.value!r} has only {len(vids)} videos for {n_folds} folds; "
                "some folds will lack this class",
                stacklevel=2,
            )

    rng = np.random.default_rng(seed)
    order = sorted(video_labels)
    rng.shuffle(order)
    order.sort(key=lambda vid: -frame_counts[vid])  # stable: seeded order breaks ties

    class_load = {label: [0] * n_folds for label in per_class_videos}
    total_load = [0] * n_folds
    mapping: dict[str, int] = {}
    for vid in order:
        label = video_labels[vid]
        fold = min(range(n_folds),
                   key=lambda f: (class_load[label][f], total_load[f], f))
        mapping[vid] = fold
        class_load[label][fold] += frame_counts[vid]
        total_load[fold] += frame_counts[vid]

    return FoldAssignment(n_folds=n_folds, mapping=mapping)


@dataclass
class FoldAudit:
    """Outcome of the leakage and balance audit for one assignment."""

    n_folds: int
    leakage_violations: list[str] = field(default_factory=list)
    unassigned_videos: list[str] = field(default_factory=list)
    empty_folds: list[int] = field(default_factory=list)
    fold_class_frames: dict[int, dict[str, int]] = field(default_factory=dict)
    fold_totals: dict[int, int] = field(default_factory=dict)
    global_shares: dict[str, float] = field(default_factory=dict)
    # per fold, per class: fold share divided by global share (1.0 = perfect)
    share_ratios: dict[int, dict[str, float]] = field(default_factory=dict)
    missing_classes: list[tuple[int, str]] = field(default_factory=list)
    tolerance: float = 0.10

    @property
    def balanced(self) -> bool:
        lo, hi = 1.0 - self.tolerance, 1.0 + self.tolerance
        return all(lo <= ratio <= hi
                   for per_class in self.share_ratios.values()
                   for ratio in per_class.values())

    @property
    def ok(self) -> bool:
        return not (self.leakage_violations or self.unassigned_videos or self.empty_folds)

    def to_dict(self) -> dict:
        return {
            "n_folds": self.n_folds,
            "ok": self.ok,
            "balanced": self.balanced,
            "tolerance": self.tolerance,
            "leakage_violations": self.leakage_violations,
            "unassigned_videos": self.unassigned_videos,
            "empty_folds": self.empty_folds,
            "fold_class_frames": {str(k): v for k, v in self.fold_class_frames.items()},
            "fold_totals": {str(k): v for k, v in self.fold_totals.items()},
            "global_shares": self.global_shares,
            "share_ratios": {str(k): v for k, v in self.share_ratios.items()},
            "missing_classes": [[f, c] for f, c in self.missing_classes],
        }


def audit_folds(
    dataset: FrameDataset,
    assignment: FoldAssignment,
    tolerance: float = 0.10,
) -> FoldAudit:
    """Check an assignment for leakage, coverage and class balance.

    Leakage checks: every video appears in exactly one fold (guaranteed by the
    mapping type, re-verified on the materialized frames) and no two frames
    share a (video_id, frame_index) key — a duplicate key means a frame was
    re-labeled across videos and its content now straddles folds.
    """
    audit = FoldAudit(n_folds=assignment.n_folds, tolerance=tolerance)

    seen_keys: dict[tuple[str, int], int] = {}
    for s in dataset:
        key = (s.video_id, s.frame_index)
        seen_keys[key] = seen_keys.get(key, 0) + 1
    for (vid, idx), count in sorted(seen_keys.items()):
        if count > 1:
            audit.leakage_violations.append(
                f"frame key ({vid!r}, {idx}) appears {count} times; "
                "frames from one recording may be split across folds"
            )

    videos = dataset.by_video()
    audit.unassigned_videos = sorted(v for v in videos if v not in assignment.mapping)

    fold_of_video = assignment.mapping
    video_folds: dict[str, set[int]] = {}
    for vid in videos:
        if vid in fold_of_video:
            video_folds.setdefault(vid, set()).add(fold_of_video[vid])
    for vid, folds in sorted(video_folds.items()):
        if len(folds) > 1:
            audit.leakage_violations.append(f"video {vid!r} materializes in folds {sorted(folds)}")

    class_totals: dict[str, int] = {}
    fold_class: dict[int, dict[str, int]] = {f: {} for f in range(assignment.n_folds)}
    for s in dataset:
        fold = fold_of_video.get(s.video_id)
        class_totals[s.label.value] = class_totals.get(s.label.value, 0) + 1
        if fold is None:
            continue
        fold_class[fold][s.label.value] = fold_class[fold].get(s.label.value, 0) + 1

    total = sum(class_totals.values())
    audit.global_shares = {c: n / total for c, n in sorted(class_totals.items())}
    audit.fold_class_frames = {f: dict(sorted(counts.items())) for f, counts in fold_class.items()}
    audit.fold_totals = {f: sum(counts.values()) for f, counts in fold_class.items()}
    audit.empty_folds = [f for f, n in audit.fold_totals.items() if n == 0]

    for fold, counts in fold_class.items():
        fold_total = audit.fold_totals[fold]
        ratios: dict[str, float] = {}
        for cls, share in audit.global_shares.items():
            if cls not in counts:
                audit.missing_classes.append((fold, cls))
            if fold_total:
                ratios[cls] = (counts.get(cls, 0) / fold_total) / share
        audit.share_ratios[fold] = ratios

    return audit
