"""Confidence scores from stochastic forward passes.

The sample standard deviation of the winning class's probability across
passes is rescaled into an inverse-precision confidence in [0, 1]:
c = 1 - (sigma - 0) / (0.5 - 0), i.e. c = 1 - 2 sigma.  Epistemic scores draw
their stochasticity from inference-time dropout, aleatoric scores from
test-time augmentation with the training policy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .data import AugmentationPolicy
from .errors import ValidationError
from .models import BaseClassifier, stochastic_forward

SIGMA_MAX = 0.5


@dataclass(frozen=True)
class ConfidenceScore:
    value: float
    kind: str  # "epistemic" | "aleatoric"
    winning_class: int
    raw_std: float


def confidence_from_std(sigma: float) -> float:
    """Map a winning-class standard deviation in [0, 0.5] to a confidence.

    c(0) = 1 (all passes identical), c(0.5) = 0 (maximal spread of a [0, 1]
    variable).  Values outside the domain by more than 1e-9 are rejected;
    tiny float overshoot is clipped.
    """
    if sigma < -1e-9 or sigma > SIGMA_MAX + 1e-9:
        raise ValidationError(f"sigma {sigma} outside [0, {SIGMA_MAX}]")
    sigma = min(max(sigma, 0.0), SIGMA_MAX)
    return 1.0 - sigma / SIGMA_MAX


def scores_from_stack(stack: np.ndarray, kind: str) -> list[ConfidenceScore]:
    """Reduce a (passes, batch, classes) probability stack to per-sample scores.

    The winning class is the argmax of the pass-mean probabilities (ties go
    to the lowest class index); its per-pass probability spread sets the
    confidence.  The n-1 standard deviation can overshoot 0.5 slightly, in
    which case the confidence floors at 0 while raw_std keeps the true value.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] < 2:
        raise ValidationError("need a (passes >= 2, batch, classes) stack")
    mean = stack.mean(axis=0)
    winners = mean.argmax(axis=1)
    scores = []
    for i, winner in enumerate(winners):
        sigma = float(stack[:, i, winner].std(ddof=1))
        value = confidence_from_std(min(sigma, SIGMA_MAX))
        scores.append(ConfidenceScore(value=value, kind=kind,
                                      winning_class=int(winner), raw_std=sigma))
    return scores


def epistemic_confidence(
    model: BaseClassifier,
    batch: np.ndarray,
    n_passes: int = 10,
    seed: int = 0,
) -> list[ConfidenceScore]:
    """Model-uncertainty confidence via Monte Carlo dropout."""
    stack = stochastic_forward(model, batch, n_passes=n_passes, mode="dropout", seed=seed)
    return scores_from_stack(stack, "epistemic")


def aleatoric_confidence(
    model: BaseClassifier,
    batch: np.ndarray,
    policy: AugmentationPolicy,
    n_passes: int = 10,
    seed: int = 0,
) -> list[ConfidenceScore]:
    """Data-uncertainty confidence via test-time augmentation."""
    stack = stochastic_forward(model, batch, n_passes=n_passes, mode="tta",
                               policy=policy, seed=seed)
    return scores_from_stack(stack, "aleatoric")


@dataclass
class CorrelationReport:
    rho: float | None
    p_value: float | None
    mean_conf_correct: float | None
    mean_conf_wrong: float | None
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "rho": self.rho, "p_value": self.p_value,
            "mean_conf_correct": self.mean_conf_correct,
            "mean_conf_wrong": self.mean_conf_wrong,
            "degenerate": self.degenerate,
        }


def correlate_with_correctness(
    confidences: Sequence[float],
    correct: Sequence[bool | int],
) -> CorrelationReport:
    """Point-biserial correlation between confidence and prediction correctness."""
    conf = np.asarray(confidences, dtype=np.float64)
    hits = np.asarray(correct, dtype=np.float64)
    if conf.shape != hits.shape or conf.ndim != 1:
        raise ValidationError("confidences and correctness must be equal-length vectors")
    if conf.size < 3:
        raise ValidationError("need at least 3 samples")
    if not np.isin(hits, (0.0, 1.0)).all():
        raise ValidationError("correctness must be 0/1 indicators")

    mean_correct = float(conf[hits == 1].mean()) if (hits == 1).any() else None
    mean_wrong = float(conf[hits == 0].mean()) if (hits == 0).any() else None

    if conf.std() == 0.0 or hits.std() == 0.0:
        return CorrelationReport(rho=None, p_value=None,
                                 mean_conf_correct=mean_correct,
                                 mean_conf_wrong=mean_wrong, degenerate=True)
    result = stats.pearsonr(conf, hits)
    return CorrelationReport(rho=float(result.statistic), p_value=float(result.pvalue),
                             mean_conf_correct=mean_correct, mean_conf_wrong=mean_wrong)


CONFIDENCE_CSV_HEADER = [
    "video_id", "frame_index", "pred_class", "epistemic_c", "aleatoric_c", "correct",
]


def save_confidence_csv(rows: Sequence[dict], path: str | Path) -> None:
    """Persist per-frame confidence rows in the documented CSV layout."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CONFIDENCE_CSV_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CONFIDENCE_CSV_HEADER})
