"""Lung ultrasound differential-diagnosis toolkit.

From raw recordings to covid / pneumonia / healthy / uninformative
predictions: a reproducible frame pipeline, leakage-free grouped
cross-validation, classifier fine-tuning, full metric reports, activation-map
explainability with a kernel two-sample significance test, dual uncertainty
scores, and a CLI plus HTTP inference service.
"""

from .data import (
    CLASS_NAMES,
    AugmentationPolicy,
    FrameDataset,
    FrameSample,
    Label,
    RecordingMeta,
    augment,
    build_dataset,
    crop_square,
    extract_frames,
    load_manifest,
    preprocess,
)
from .errors import (
    ConfigError,
    PocusError,
    SchemaError,
    TrainingDivergedError,
    UnsupportedOperationError,
    ValidationError,
)
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    aggregate_video,
    confusion_matrix,
    ensemble_predict,
    evaluate,
    max_accuracy_point,
    per_class_metrics,
    pr_curve,
    roc_curve,
)
from .models import (
    ClassifierConfig,
    build_frame_classifier,
    build_video_classifier,
    chunk_video,
    load_checkpoint,
    predict_proba,
    predict_with_features,
    save_checkpoint,
    stochastic_forward,
)
from .splits import FoldAssignment, audit_folds, stratified_group_kfold
from .training import TrainConfig, fit, run_cross_validation, train_fold
from .uncertainty import (
    ConfidenceScore,
    aleatoric_confidence,
    confidence_from_std,
    correlate_with_correctness,
    epistemic_confidence,
)

__version__ = "0.1.0"
