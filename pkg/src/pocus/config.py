"""YAML configuration with dotted-key lookup.

The CLI reads defaults from the file named by the ``POCUS_CONFIG`` environment
variable (or ``--config``).  Recognized keys:

    data.target_hz            frame sampling rate (default 3.0)
    data.max_frames           per-video frame cap (default 30)
    data.include_uninformative  include the out-of-distribution class
    augment.h_flip / v_flip / max_rotation_deg / max_translation_frac / rng_seed
    train.epochs / batch_size / learning_rate / patience / seed
    serve.host / port / arch / ckpt_dir / ensemble / max_upload_mb
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any

import yaml

from .data import AugmentationPolicy
from .errors import ConfigError

ENV_VAR = "POCUS_CONFIG"


def load_config(path: str | Path | None = None) -> dict:
    """Load the YAML config file, falling back to $POCUS_CONFIG, then {}."""
    if path is None:
        path = os.environ.get(ENV_VAR)
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    payload = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    return payload


def get_key(config: dict, dotted: str, default: Any = None) -> Any:
    node: Any = config
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def augmentation_policy_from_config(config: dict) -> AugmentationPolicy:
    return AugmentationPolicy(
        h_flip=bool(get_key(config, "augment.h_flip", True)),
        v_flip=bool(get_key(config, "augment.v_flip", True)),
        max_rotation_deg=float(get_key(config, "augment.max_rotation_deg", 10.0)),
        max_translation_frac=float(get_key(config, "augment.max_translation_frac", 0.10)),
        rng_seed=int(get_key(config, "augment.rng_seed", 0)),
    )
