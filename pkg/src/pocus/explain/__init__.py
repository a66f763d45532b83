"""Model explainability: activation maps and the coordinate-distribution test."""

from .cam import (
    CamPoint,
    CamPointSet,
    Heatmap,
    cam,
    cam_scatter_export,
    export_review_bundle,
    grad_cam,
    load_points_csv,
    max_activation_point,
    overlay,
    save_points_csv,
)
from .mmd import MmdResult, gaussian_kernel, median_bandwidth, mmd, resampling_test

__all__ = [
    "CamPoint",
    "CamPointSet",
    "Heatmap",
    "MmdResult",
    "cam",
    "cam_scatter_export",
    "export_review_bundle",
    "gaussian_kernel",
    "grad_cam",
    "load_points_csv",
    "max_activation_point",
    "median_bandwidth",
    "mmd",
    "overlay",
    "resampling_test",
    "save_points_csv",
]
