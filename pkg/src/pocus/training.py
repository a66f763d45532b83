"""Fine-tuning per fold and full cross-validation orchestration.

The regimen: Adam at 1e-4, batch size 8, 40 epochs, cross-entropy on the
softmax outputs, early stopping on validation loss with best-weight restore.
Augmentation touches training frames only; the held-out fold doubles as the
early-stopping validation set (an optimistic but faithful protocol — see the
README's limitations section).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .data import AugmentationPolicy, FrameDataset, FrameSample, augment, class_index
from .errors import ConfigError, TrainingDivergedError, ValidationError
from .metrics import EvaluationResult, aggregate_reports, evaluate
from .models import (
    BaseClassifier,
    ClassifierConfig,
    build_frame_classifier,
    checkpoint_path,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
)
from .splits import FoldAssignment


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 8
    learning_rate: float = 1e-4
    patience: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "train_loss": self.train_loss,
                "val_loss": self.val_loss, "train_acc": self.train_acc,
                "val_acc": self.val_acc}


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def save_jsonl(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict()) + "\n")


def _batch_tensors(samples: Sequence[FrameSample]) -> tuple[np.ndarray, np.ndarray]:
    pixels = np.stack([s.pixels for s in samples])
    labels = np.array([class_index(s.label) for s in samples], dtype=np.int64)
    return pixels, labels


def _evaluate_loss(model: BaseClassifier, pixels: np.ndarray, labels: np.ndarray,
                   batch_size: int) -> tuple[float, float]:
    criterion = nn.CrossEntropyLoss(reduction="sum")
    model.eval()
    total_loss = 0.0
    hits = 0
    with torch.no_grad():
        for i in range(0, len(pixels), batch_size):
            logits = model.logits(pixels[i:i + batch_size])
            target = torch.from_numpy(labels[i:i + batch_size])
            total_loss += float(criterion(logits, target))
            hits += int((logits.argmax(dim=1) == target).sum())
    return total_loss / len(pixels), hits / len(pixels)


def fit(
    model: BaseClassifier,
    train_samples: Sequence[FrameSample],
    val_samples: Sequence[FrameSample],
    config: TrainConfig,
    policy: AugmentationPolicy | None = None,
    required_classes: Sequence[str] | None = None,
) -> TrainLog:
    """Train in place; keep (and restore) the best validation-loss weights.

    Early stopping counts epochs without improvement over the best validation
    loss seen so far — the untrained model sets the baseline — and stops once
    the count exceeds ``patience``.
    """
    if not train_samples:
        raise ValidationError("training set is empty")
    if not val_samples:
        raise ValidationError("validation set is empty")

    train_classes = {s.label.value for s in train_samples}
    required = set(required_classes) if required_classes is not None else \
        train_classes | {s.label.value for s in val_samples}
    missing = sorted(required - train_classes)
    if missing:
        raise ValidationError(f"class {missing[0]!r} has no training frames")

    log = TrainLog()
    if config.epochs == 0:
        return log

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    criterion = nn.CrossEntropyLoss()
    optimizer = torch.optim.Adam(
        (p for p in model.parameters() if p.requires_grad), lr=config.learning_rate,
    )

    val_pixels, val_labels = _batch_tensors(val_samples)
    best_val, _ = _evaluate_loss(model, val_pixels, val_labels, config.batch_size)
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    log.best_epoch = 0
    bad_epochs = 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_samples))
        model.train()
        running_loss = 0.0
        running_hits = 0
        for start in range(0, len(order), config.batch_size):
            chunk = [train_samples[i] for i in order[start:start + config.batch_size]]
            if policy is not None:
                batch_rng = np.random.default_rng(
                    np.random.SeedSequence(entropy=config.seed, spawn_key=(epoch, start))
                )
                chunk = [augment(s, policy, rng=batch_rng) for s in chunk]
            pixels, labels = _batch_tensors(chunk)
            logits = model.logits(pixels)
            target = torch.from_numpy(labels)
            loss = criterion(logits, target)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            running_loss += float(loss.detach()) * len(chunk)
            running_hits += int((logits.detach().argmax(dim=1) == target).sum())

        train_loss = running_loss / len(train_samples)
        train_acc = running_hits / len(train_samples)
        val_loss, val_acc = _evaluate_loss(model, val_pixels, val_labels, config.batch_size)
        log.records.append(EpochRecord(epoch, train_loss, val_loss, train_acc, val_acc))

        if val_loss < best_val:
            best_val = val_loss
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            log.best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > config.patience:
                log.stopped_early = True
                break

    model.load_state_dict(best_state)
    model.eval()
    return log


def fold_split(
    dataset: FrameDataset,
    assignment: FoldAssignment,
    fold_k: int,
) -> tuple[list[FrameSample], list[FrameSample]]:
    """Training samples (all other folds) and held-out samples for fold k."""
    if not 0 <= fold_k < assignment.n_folds:
        raise ValidationError(f"fold {fold_k} out of range for {assignment.n_folds} folds")
    train, held = [], []
    for sample in dataset:
        fold = assignment.mapping.get(sample.video_id)
        if fold is None:
            raise ValidationError(f"video {sample.video_id!r} missing from the split")
        (held if fold == fold_k else train).append(sample)
    return train, held


def train_fold(
    model: BaseClassifier,
    dataset: FrameDataset,
    assignment: FoldAssignment,
    fold_k: int,
    config: TrainConfig,
    policy: AugmentationPolicy | None = None,
) -> tuple[BaseClassifier, TrainLog]:
    """Fine-tune one fold: train on the rest, validate on the held-out fold."""
    train, held = fold_split(dataset, assignment, fold_k)
    required = sorted({s.label.value for s in dataset})
    log = fit(model, train, held, config, policy=policy, required_classes=required)
    return model, log


@dataclass
class CrossValResult:
    fold_reports: list[EvaluationResult]
    aggregate: dict[str, dict[str, float]]
    checkpoint_files: list[Path]

    def aggregate_lines(self) -> list[str]:
        from .metrics import format_pm
        return [f"{key}: {format_pm(v['mean'], v['std'])}"
                for key, v in sorted(self.aggregate.items())]


def run_cross_validation(
    dataset: FrameDataset,
    assignment: FoldAssignment,
    classifier_config: ClassifierConfig,
    train_config: TrainConfig,
    policy: AugmentationPolicy | None = None,
    ckpt_dir: str | Path = "ckpt",
    exclude_uninformative: bool = True,
) -> CrossValResult:
    """Train and evaluate every fold; resume from matching checkpoints.

    Each fold is scored on its held-out videos only.  A checkpoint whose
    sidecar records a different split hash is refused and retrained, so no
    held-out frame can leak through a stale model.
    """
    ckpt_dir = Path(ckpt_dir)
    split_hash = assignment.split_hash()
    reports: list[EvaluationResult] = []
    files: list[Path] = []

    for fold in range(assignment.n_folds):
        path = checkpoint_path(ckpt_dir, classifier_config.arch, fold)
        model: BaseClassifier | None = None
        if path.exists():
            candidate, meta = load_checkpoint(path)
            if meta.get("split_hash") == split_hash:
                model = candidate
        if model is None:
            model = build_frame_classifier(classifier_config, seed=train_config.seed + fold)
            model, log = train_fold(model, dataset, assignment, fold,
                                    train_config, policy=policy)
            save_checkpoint(model, path, sidecar={
                "seed": train_config.seed + fold,
                "fold": fold,
                "epoch": log.best_epoch,
                "split_hash": split_hash,
                "val_metrics": log.records[-1].to_dict() if log.records else None,
            })
            log.save_jsonl(path.with_suffix(".log.jsonl"))
        files.append(path)

        _, held = fold_split(dataset, assignment, fold)
        held_ds = FrameDataset(held)
        reports.append(evaluate(lambda b, m=model: predict_proba(m, b), held_ds,
                                exclude_uninformative=exclude_uninformative))

    aggregate = aggregate_reports([r.frame_report for r in reports])
    return CrossValResult(fold_reports=reports, aggregate=aggregate,
                          checkpoint_files=files)


def verify_split_hash(ckpt: str | Path, assignment: FoldAssignment) -> None:
    """Refuse evaluation when a checkpoint was trained on a different split."""
    sidecar = Path(ckpt).with_suffix(".json")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    recorded = meta.get("split_hash")
    if recorded is not None and recorded != assignment.split_hash():
        raise ValidationError(
            f"checkpoint {ckpt} was trained on split {recorded[:12]}..., "
            f"current split is {assignment.split_hash()[:12]}..."
        )
