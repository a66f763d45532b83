"""Classification metrics, curves and report assembly.

Everything here is pure numpy.  Per-class metrics come from the one-vs-rest
binarization of a confusion matrix; ROC/PR curves are explicit threshold
sweeps whose AUC matches the pairwise-comparison (Mann-Whitney) estimator
with half credit for ties.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import CLASS_NAMES, FrameDataset
from .errors import ValidationError


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        k = len(self.class_names)
        if self.counts.shape != (k, k):
            raise ValidationError(f"confusion matrix must be {k}x{k}")
        if (self.counts < 0).any():
            raise ValidationError("confusion matrix entries must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_normalized(self) -> np.ndarray:
        """Rows sum to 1 where defined; the diagonal is per-class recall."""
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(sums > 0, self.counts / sums, 0.0)
        return out

    def col_normalized(self) -> np.ndarray:
        """Columns sum to 1 where defined; the diagonal is per-class precision."""
        sums = self.counts.sum(axis=0, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(sums > 0, self.counts / sums, 0.0)
        return out

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def save_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["true\\pred", *self.class_names])
            for name, row in zip(self.class_names, self.counts):
                writer.writerow([name, *row.tolist()])


def confusion_matrix(
    y_true: Sequence[int],
    y_pred: Sequence[int],
    class_names: Sequence[str] = CLASS_NAMES,
) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValidationError("label vectors must have equal length")
    k = len(class_names)
    if y_true.size and (y_true.min() < 0 or y_true.max() >= k
                        or y_pred.min() < 0 or y_pred.max() >= k):
        raise ValidationError(f"labels must be in [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts=counts, class_names=tuple(class_names))


@dataclass
class ClassMetrics:
    """One-vs-rest metrics for a single class.

    A zero denominator yields a 0 value plus an entry in ``degenerate`` rather
    than NaN, so aggregate means stay well-defined.
    """

    recall: float
    precision: float
    f1: float
    specificity: float
    mcc: float
    degenerate: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "recall": self.recall, "precision": self.precision, "f1": self.f1,
            "specificity": self.specificity, "mcc": self.mcc,
            "degenerate": list(self.degenerate),
        }


def _safe_div(num: float, den: float, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def per_class_metrics(cm: ConfusionMatrix, class_k: int) -> ClassMetrics:
    """Binarize the matrix for one class and evaluate the scalar metrics."""
    counts = cm.counts.astype(np.float64)
    tp = counts[class_k, class_k]
    fn = counts[class_k].sum() - tp
    fp = counts[:, class_k].sum() - tp
    tn = counts.sum() - tp - fn - fp

    flags: list[str] = []
    recall = _safe_div(tp, tp + fn, "recall", flags)
    precision = _safe_div(tp, tp + fp, "precision", flags)
    specificity = _safe_div(tn, tn + fp, "specificity", flags)
    f1 = _safe_div(2 * precision * recall, precision + recall, "f1", flags)
    mcc_den = np.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    mcc = _safe_div(tp * tn - fp * fn, mcc_den, "mcc", flags)
    return ClassMetrics(recall=recall, precision=precision, f1=f1,
                        specificity=specificity, mcc=mcc, degenerate=tuple(flags))


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def save_csv(self, path: str | Path) -> None:
        _write_curve_csv(path, ["threshold", "fpr", "tpr"],
                         zip(self.thresholds, self.fpr, self.tpr))


@dataclass
class PrCurve:
    thresholds: np.ndarray
    recall: np.ndarray
    precision: np.ndarray

    def save_csv(self, path: str | Path) -> None:
        _write_curve_csv(path, ["threshold", "recall", "precision"],
                         zip(self.thresholds, self.recall, self.precision))


def _write_curve_csv(path: str | Path, header: list[str], rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def _check_binary_inputs(y_true: np.ndarray, scores: np.ndarray) -> None:
    if y_true.shape != scores.shape or y_true.ndim != 1:
        raise ValidationError("labels and scores must be equal-length vectors")
    if not np.isin(y_true, (0, 1)).all():
        raise ValidationError("one-vs-rest labels must be 0 or 1")


def roc_curve(y_true: Sequence[int], scores: Sequence[float]) -> RocCurve:
    """Threshold sweep over the unique scores (predict positive at score >= t).

    The returned AUC equals the probability that a random positive outscores a
    random negative, counting ties as one half.
    """
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    _check_binary_inputs(y_true, scores)
    n_pos = int(y_true.sum())
    n_neg = int(y_true.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("ROC needs at least one positive and one negative")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_true = y_true[order]

    # Cumulative counts at each unique threshold, descending.
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    cut = np.concatenate([distinct, [y_true.size - 1]])
    tp = np.cumsum(sorted_true)[cut]
    fp = np.cumsum(1 - sorted_true)[cut]

    thresholds = np.concatenate([[np.inf], sorted_scores[cut]])
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=auc)


def pr_curve(y_true: Sequence[int], scores: Sequence[float]) -> PrCurve:
    """Precision-recall pairs from the same descending threshold sweep."""
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    _check_binary_inputs(y_true, scores)
    n_pos = int(y_true.sum())
    if n_pos == 0:
        raise ValidationError("PR curve needs at least one positive")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_true = y_true[order]
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    cut = np.concatenate([distinct, [y_true.size - 1]])
    tp = np.cumsum(sorted_true)[cut]
    predicted = cut + 1.0

    return PrCurve(
        thresholds=sorted_scores[cut],
        recall=tp / n_pos,
        precision=tp / predicted,
    )


@dataclass
class OperatingPoint:
    threshold: float
    fpr: float
    tpr: float
    accuracy: float

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "fpr": self.fpr,
                "tpr": self.tpr, "accuracy": self.accuracy}


def max_accuracy_point(y_true: Sequence[int], scores: Sequence[float]) -> OperatingPoint:
    """The threshold maximizing binarized accuracy; ties prefer lower FPR."""
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    _check_binary_inputs(y_true, scores)
    n_pos = int(y_true.sum())
    n_neg = int(y_true.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("needs at least one positive and one negative")

    best: OperatingPoint | None = None
    # np.inf sentinel = predict everything negative.
    for t in [np.inf, *np.unique(scores)[::-1]]:
        pred = scores >= t
        tp = int((pred & (y_true == 1)).sum())
        fp = int((pred & (y_true == 0)).sum())
        acc = (tp + (n_neg - fp)) / y_true.size
        point = OperatingPoint(threshold=float(t), fpr=fp / n_neg, tpr=tp / n_pos, accuracy=acc)
        if best is None or acc > best.accuracy or (acc == best.accuracy and point.fpr < best.fpr):
            best = point
    assert best is not None
    return best


def aggregate_video(frame_probs: Mapping[str, np.ndarray]) -> dict[str, tuple[np.ndarray, int]]:
    """Average per-frame class probabilities per video, then argmax.

    Input maps video id to an (n_frames, n_classes) array; output maps it to
    (mean probability vector, winning class index).
    """
    out: dict[str, tuple[np.ndarray, int]] = {}
    for vid, probs in frame_probs.items():
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] == 0:
            raise ValidationError(f"video {vid!r}: need a non-empty (frames, classes) array")
        mean = probs.mean(axis=0)
        out[vid] = (mean, int(np.argmax(mean)))
    return out


def ensemble_predict(
    models: Sequence,
    batch: np.ndarray,
    predict_fn: Callable[[object, np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Average the probability matrices of several models.

    The mean is computed as first-output plus mean-of-differences, so an
    ensemble of identical models reproduces a single model's output exactly.
    """
    if not models:
        raise ValidationError("ensemble needs at least one model")
    if predict_fn is None:
        from .models import predict_proba as predict_fn  # noqa: PLC0415 (cycle guard)
    outputs = [np.asarray(predict_fn(m, batch), dtype=np.float64) for m in models]
    base = outputs[0]
    if len(outputs) == 1:
        return base
    delta = np.zeros_like(base)
    for out in outputs[1:]:
        delta += out - base
    return base + delta / len(outputs)


@dataclass
class MetricsReport:
    """Per-class metrics, curves and operating points for one evaluation."""

    class_names: tuple[str, ...]          # classes reported on
    confusion: ConfusionMatrix            # over all model classes
    per_class: dict[str, ClassMetrics]
    accuracy: float
    balanced_accuracy: float
    roc: dict[str, RocCurve] = field(default_factory=dict)
    pr: dict[str, PrCurve] = field(default_factory=dict)
    operating_points: dict[str, OperatingPoint] = field(default_factory=dict)
    n_samples: int = 0

    def scalars(self) -> dict[str, float]:
        """Flat {metric: value} view used for cross-fold aggregation."""
        out = {"accuracy": self.accuracy, "balanced_accuracy": self.balanced_accuracy}
        for cls, m in self.per_class.items():
            out[f"{cls}.recall"] = m.recall
            out[f"{cls}.precision"] = m.precision
            out[f"{cls}.f1"] = m.f1
            out[f"{cls}.specificity"] = m.specificity
            out[f"{cls}.mcc"] = m.mcc
        for cls, curve in self.roc.items():
            out[f"{cls}.auc"] = curve.auc
        return out

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "classes": {
                cls: {
                    **self.per_class[cls].to_dict(),
                    "auc": self.roc[cls].auc if cls in self.roc else None,
                    "max_accuracy_point": self.operating_points[cls].to_dict()
                    if cls in self.operating_points else None,
                }
                for cls in self.class_names
            },
            "confusion": {
                "class_names": list(self.confusion.class_names),
                "counts": self.confusion.counts.tolist(),
            },
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def report_from_predictions(
    y_true: np.ndarray,
    probs: np.ndarray,
    class_names: Sequence[str] = CLASS_NAMES,
    exclude_class: str | None = None,
) -> MetricsReport:
    """Build a full MetricsReport from true labels and probability rows.

    With ``exclude_class`` set, ground-truth samples of that class are dropped
    before scoring, but predictions stay an argmax over all classes: a sample
    routed to the excluded class still counts as an error for its true class.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] != y_true.shape[0]:
        raise ValidationError("probs must be (n_samples, n_classes) matching labels")
    if probs.shape[1] != len(class_names):
        raise ValidationError("probability width must match the class set")

    keep = np.ones(y_true.size, dtype=bool)
    if exclude_class is not None:
        excluded_idx = list(class_names).index(exclude_class)
        keep = y_true != excluded_idx
    y_kept = y_true[keep]
    p_kept = probs[keep]
    if y_kept.size == 0:
        raise ValidationError("no samples left to evaluate")
    y_pred = p_kept.argmax(axis=1)

    cm = confusion_matrix(y_kept, y_pred, class_names)
    present = sorted(set(y_kept.tolist()))
    reported = tuple(class_names[i] for i in present)

    per_class: dict[str, ClassMetrics] = {}
    roc: dict[str, RocCurve] = {}
    pr: dict[str, PrCurve] = {}
    points: dict[str, OperatingPoint] = {}
    recalls = []
    for idx in present:
        cls = class_names[idx]
        m = per_class_metrics(cm, idx)
        per_class[cls] = m
        recalls.append(m.recall)
        onevsrest = (y_kept == idx).astype(np.int64)
        if 0 < onevsrest.sum() < onevsrest.size:
            roc[cls] = roc_curve(onevsrest, p_kept[:, idx])
            pr[cls] = pr_curve(onevsrest, p_kept[:, idx])
            points[cls] = max_accuracy_point(onevsrest, p_kept[:, idx])

    return MetricsReport(
        class_names=reported,
        confusion=cm,
        per_class=per_class,
        accuracy=cm.accuracy(),
        balanced_accuracy=float(np.mean(recalls)) if recalls else 0.0,
        roc=roc,
        pr=pr,
        operating_points=points,
        n_samples=int(y_kept.size),
    )


@dataclass
class EvaluationResult:
    frame_report: MetricsReport
    video_report: MetricsReport | None
    frame_probs: np.ndarray
    video_probs: dict[str, tuple[np.ndarray, int]]


def evaluate(
    predict_fn: Callable[[np.ndarray], np.ndarray],
    dataset: FrameDataset,
    exclude_uninformative: bool = True,
    batch_size: int = 32,
    class_names: Sequence[str] = CLASS_NAMES,
) -> EvaluationResult:
    """Score a predictor on a dataset at frame level and video level.

    ``predict_fn`` maps a (B, 224, 224, 3) pixel batch to (B, n_classes)
    probabilities — a single model, an ensemble closure, anything.
    """
    pixels = dataset.pixel_array()
    y_true = dataset.label_indices()
    chunks = [predict_fn(pixels[i:i + batch_size]) for i in range(0, len(pixels), batch_size)]
    probs = np.concatenate(chunks, axis=0)

    exclude = "uninformative" if exclude_uninformative else None
    frame_report = report_from_predictions(y_true, probs, class_names, exclude_class=exclude)

    by_video: dict[str, list[int]] = {}
    for i, sample in enumerate(dataset):
        by_video.setdefault(sample.video_id, []).append(i)
    video_probs = aggregate_video({vid: probs[idx] for vid, idx in by_video.items()})

    video_labels = {vid: int(y_true[idx[0]]) for vid, idx in by_video.items()}
    vids = sorted(video_probs)
    v_true = np.array([video_labels[v] for v in vids])
    v_probs = np.stack([video_probs[v][0] for v in vids])
    video_report: MetricsReport | None
    try:
        video_report = report_from_predictions(v_true, v_probs, class_names, exclude_class=exclude)
    except ValidationError:
        video_report = None

    return EvaluationResult(
        frame_report=frame_report,
        video_report=video_report,
        frame_probs=probs,
        video_probs=video_probs,
    )


def aggregate_reports(reports: Sequence[MetricsReport]) -> dict[str, dict[str, float]]:
    """Mean and sample standard deviation of each scalar metric across folds."""
    if not reports:
        raise ValidationError("no reports to aggregate")
    keys = sorted(set().union(*(r.scalars().keys() for r in reports)))
    out: dict[str, dict[str, float]] = {}
    for key in keys:
        values = np.array([r.scalars()[key] for r in reports if key in r.scalars()])
        std = float(values.std(ddof=1)) if values.size > 1 else 0.0
        out[key] = {"mean": float(values.mean()), "std": std, "n_folds": int(values.size)}
    return out


def format_pm(mean: float, std: float) -> str:
    """Render a cross-fold aggregate in the familiar ``0.93 ± 0.05`` style."""
    return f"{mean:.2f} ± {std:.2f}"


def save_report_bundle(result: EvaluationResult, out_dir: str | Path,
                       plots: bool = True) -> None:
    """Write report JSON, curve/confusion CSVs and optional PNG panels."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.frame_report.save(out / "frame_report.json")
    result.frame_report.confusion.save_csv(out / "frame_confusion.csv")
    for cls, curve in result.frame_report.roc.items():
        curve.save_csv(out / f"roc_{cls}.csv")
    for cls, curve in result.frame_report.pr.items():
        curve.save_csv(out / f"pr_{cls}.csv")
    if result.video_report is not None:
        result.video_report.save(out / "video_report.json")
        result.video_report.confusion.save_csv(out / "video_confusion.csv")
    if plots:
        plot_report_panels(result.frame_report, out / "frame_panels.png")


def plot_report_panels(report: MetricsReport, path: str | Path) -> None:
    """Four panels: ROC, PR and row-/column-normalized confusion matrices."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 4, figsize=(18, 4))
    for cls in report.class_names:
        if cls in report.roc:
            axes[0].plot(report.roc[cls].fpr, report.roc[cls].tpr,
                         label=f"{cls} (AUC {report.roc[cls].auc:.2f})")
            pt = report.operating_points[cls]
            axes[0].plot([pt.fpr], [pt.tpr], "o", ms=4, color=axes[0].lines[-1].get_color())
        if cls in report.pr:
            axes[1].plot(report.pr[cls].recall, report.pr[cls].precision, label=cls)
    axes[0].plot([0, 1], [0, 1], "k--", lw=0.5)
    axes[0].set(xlabel="false positive rate", ylabel="true positive rate", title="ROC")
    axes[0].legend(fontsize=7)
    axes[1].set(xlabel="recall", ylabel="precision", title="Precision-recall")
    axes[1].legend(fontsize=7)

    names = report.confusion.class_names
    for ax, grid, title in (
        (axes[2], report.confusion.col_normalized(), "Precision view"),
        (axes[3], report.confusion.row_normalized(), "Sensitivity view"),
    ):
        ax.imshow(grid, cmap="Blues", vmin=0, vmax=1)
        ax.set_xticks(range(len(names)), names, rotation=45, fontsize=7)
        ax.set_yticks(range(len(names)), names, fontsize=7)
        ax.set(title=title, xlabel="predicted", ylabel="true")
        for i in range(len(names)):
            for j in range(len(names)):
                ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center", fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
