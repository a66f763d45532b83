"""Command-line interface over the library modules.

Commands mirror the pipeline stages: ingest recordings into a frame cache,
build splits, train folds, evaluate, export activation maps, run the MMD
analysis, score uncertainty, serve the HTTP API and export review bundles.
Defaults can come from a YAML file named by $POCUS_CONFIG or --config.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import config as config_mod
from .data import (
    build_dataset,
    load_frame_cache,
    load_manifest,
    save_frame_cache,
)
from .errors import PocusError
from .explain import (
    cam,
    cam_scatter_export,
    export_review_bundle,
    grad_cam,
    load_points_csv,
    max_activation_point,
    resampling_test,
)
from .metrics import ensemble_predict, evaluate, save_report_bundle
from .models import (
    ClassifierConfig,
    FrameClassifier,
    checkpoint_path,
    load_checkpoint,
    predict_proba,
)
from .splits import FoldAssignment, audit_folds, stratified_group_kfold
from .training import TrainConfig, run_cross_validation, verify_split_hash
from .uncertainty import (
    aleatoric_confidence,
    epistemic_confidence,
    save_confidence_csv,
)

COMMANDS = ("ingest", "split", "train", "evaluate", "explain", "mmd",
            "uncertainty", "serve", "bundle")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pocus", description=__doc__)
    parser.add_argument("--config", help="YAML config file (default: $POCUS_CONFIG)")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True

    p = sub.add_parser("ingest", help="build the frame cache from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="frame cache directory")
    p.add_argument("--target-hz", type=float, default=None)
    p.add_argument("--max-frames", type=int, default=None)
    p.add_argument("--include-uninformative", action="store_true")

    p = sub.add_parser("split", help="write a grouped stratified split file")
    p.add_argument("--frames", required=True, help="frame cache directory")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="split JSON path")
    p.add_argument("--tolerance", type=float, default=0.10)

    p = sub.add_parser("train", help="run cross-validation training")
    p.add_argument("--frames", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--arch", default="vgg_cam")
    p.add_argument("--ckpt-dir", default="ckpt")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--include-uninformative", action="store_true",
                   help="keep uninformative rows in the evaluation reports")

    p = sub.add_parser("evaluate", help="evaluate checkpoints on held-out folds")
    p.add_argument("--frames", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--arch", default="vgg_cam")
    p.add_argument("--ckpt-dir", default="ckpt")
    p.add_argument("--fold", type=int, default=None, help="single fold (default: ensemble)")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--include-uninformative", action="store_true")

    p = sub.add_parser("explain", help="export activation maps and coordinates")
    p.add_argument("--frames", required=True)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--out", required=True)
    p.add_argument("--grad-cam", action="store_true", help="force Grad-CAM")

    p = sub.add_parser("mmd", help="kernel two-sample test over CAM coordinates")
    p.add_argument("--points", required=True, help="cam_points.csv")
    p.add_argument("--n-resamples", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--null", choices=("permutation", "bootstrap"), default="permutation")

    p = sub.add_parser("uncertainty", help="confidence scores for every frame")
    p.add_argument("--frames", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="confidence CSV path")
    p.add_argument("--n-passes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--ckpt-dir", default="ckpt")
    p.add_argument("--arch", default="vgg_cam")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--single-model", action="store_true", help="disable the fold ensemble")
    p.add_argument("--frontend", default=None,
                   help="directory of the built screening UI to serve at /")

    p = sub.add_parser("bundle", help="export a per-video expert review bundle")
    p.add_argument("--frames", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--video", required=True, help="video id")
    p.add_argument("--out", required=True)

    return parser


def _train_config(args, cfg: dict) -> TrainConfig:
    def pick(cli_value, key, default):
        if cli_value is not None:
            return cli_value
        return config_mod.get_key(cfg, key, default)

    return TrainConfig(
        epochs=int(pick(args.epochs, "train.epochs", 40)),
        batch_size=int(pick(args.batch_size, "train.batch_size", 8)),
        learning_rate=float(pick(args.learning_rate, "train.learning_rate", 1e-4)),
        patience=int(config_mod.get_key(cfg, "train.patience", 5)),
        seed=int(pick(args.seed, "train.seed", 0)),
    )


def cmd_ingest(args, cfg: dict) -> int:
    manifest = load_manifest(args.manifest)
    dataset = build_dataset(
        manifest,
        target_hz=args.target_hz
        if args.target_hz is not None else float(config_mod.get_key(cfg, "data.target_hz", 3.0)),
        max_frames=args.max_frames
        if args.max_frames is not None else int(config_mod.get_key(cfg, "data.max_frames", 30)),
        include_uninformative=args.include_uninformative
        or bool(config_mod.get_key(cfg, "data.include_uninformative", False)),
    )
    written = save_frame_cache(dataset, args.out)
    counts = dataset.class_counts()
    print(f"wrote {len(written)} frames to {args.out}")
    for cls, n in counts.items():
        print(f"  {cls}: {n}")
    return 0


def cmd_split(args, cfg: dict) -> int:
    dataset = load_frame_cache(args.frames)
    assignment = stratified_group_kfold(dataset, n_folds=args.folds, seed=args.seed)
    assignment.save(args.out)
    audit = audit_folds(dataset, assignment, tolerance=args.tolerance)
    print(json.dumps(audit.to_dict(), indent=2))
    if not audit.ok:
        print("audit FAILED", file=sys.stderr)
        return 1
    print(f"split written to {args.out}")
    return 0


def cmd_train(args, cfg: dict) -> int:
    dataset = load_frame_cache(args.frames)
    assignment = FoldAssignment.load(args.split)
    policy = None if args.no_augment else config_mod.augmentation_policy_from_config(cfg)
    result = run_cross_validation(
        dataset, assignment,
        ClassifierConfig(arch=args.arch),
        _train_config(args, cfg),
        policy=policy,
        ckpt_dir=args.ckpt_dir,
        exclude_uninformative=not args.include_uninformative,
    )
    for line in result.aggregate_lines():
        print(line)
    return 0


def cmd_evaluate(args, cfg: dict) -> int:
    dataset = load_frame_cache(args.frames)
    assignment = FoldAssignment.load(args.split)
    if args.fold is not None:
        ckpt = checkpoint_path(args.ckpt_dir, args.arch, args.fold)
        verify_split_hash(ckpt, assignment)
        model, _ = load_checkpoint(ckpt)
        predict = lambda b: predict_proba(model, b)  # noqa: E731
    else:
        models = []
        for fold in range(assignment.n_folds):
            ckpt = checkpoint_path(args.ckpt_dir, args.arch, fold)
            verify_split_hash(ckpt, assignment)
            models.append(load_checkpoint(ckpt)[0])
        predict = lambda b: ensemble_predict(models, b)  # noqa: E731
    result = evaluate(predict, dataset,
                      exclude_uninformative=not args.include_uninformative)
    save_report_bundle(result, args.out)
    report = result.frame_report
    print(f"frame accuracy: {report.accuracy:.4f}  balanced: {report.balanced_accuracy:.4f}")
    if result.video_report is not None:
        print(f"video accuracy: {result.video_report.accuracy:.4f}")
    print(f"report bundle written to {args.out}")
    return 0


def cmd_explain(args, cfg: dict) -> int:
    from .explain import CamPointSet

    dataset = load_frame_cache(args.frames)
    model, _ = load_checkpoint(args.ckpt)
    use_plain_cam = (not args.grad_cam and isinstance(model, FrameClassifier)
                     and model.cam_weights() is not None)
    point_sets: dict[str, CamPointSet] = {}
    for sample in dataset:
        probs = predict_proba(model, sample.pixels[None])[0]
        pred = int(np.argmax(probs))
        hm = cam(model, sample.pixels, pred) if use_plain_cam \
            else grad_cam(model, sample.pixels, pred)
        point = max_activation_point(hm, video_id=sample.video_id,
                                     frame_index=sample.frame_index)
        label = sample.label.value
        point_sets.setdefault(label, CamPointSet(label=label)).points.append(point)
    artifacts = cam_scatter_export(list(point_sets.values()), args.out)
    for name, path in artifacts.items():
        print(f"{name}: {path}")
    return 0


def cmd_mmd(args, cfg: dict) -> int:
    point_sets = load_points_csv(args.points)
    if len(point_sets) < 2:
        print("need at least two classes of points", file=sys.stderr)
        return 1
    for i, first in enumerate(point_sets):
        for second in point_sets[i + 1:]:
            result = resampling_test(first.coords(), second.coords(),
                                     n_resamples=args.n_resamples, seed=args.seed,
                                     null=args.null)
            print(f"{first.label} vs {second.label}: "
                  f"MMD^2={result.mmd_sq:.6f} MMD={result.mmd:.6f} "
                  f"sigma={result.sigma:.4f} p={result.p_value:.6f}"
                  f"{' (exact)' if result.exact else ''}")
    return 0


def cmd_uncertainty(args, cfg: dict) -> int:
    from .data import CLASS_NAMES, class_index

    dataset = load_frame_cache(args.frames)
    model, _ = load_checkpoint(args.ckpt)
    policy = config_mod.augmentation_policy_from_config(cfg)
    batch = dataset.pixel_array()
    epi = epistemic_confidence(model, batch, n_passes=args.n_passes, seed=args.seed)
    ale = aleatoric_confidence(model, batch, policy, n_passes=args.n_passes, seed=args.seed)
    rows = []
    for sample, e, a in zip(dataset, epi, ale):
        rows.append({
            "video_id": sample.video_id,
            "frame_index": sample.frame_index,
            "pred_class": CLASS_NAMES[e.winning_class],
            "epistemic_c": repr(e.value),
            "aleatoric_c": repr(a.value),
            "correct": int(e.winning_class == class_index(sample.label)),
        })
    save_confidence_csv(rows, args.out)
    print(f"wrote {len(rows)} confidence rows to {args.out}")
    return 0


def cmd_serve(args, cfg: dict) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    from pathlib import Path

    service_config = ServiceConfig.from_checkpoint_dir(
        args.ckpt_dir, args.arch,
        ensemble=not args.single_model,
        max_upload_mb=int(config_mod.get_key(cfg, "serve.max_upload_mb", 50)),
        frontend_dir=Path(args.frontend) if args.frontend else None,
    )
    app = create_app(service_config)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_bundle(args, cfg: dict) -> int:
    dataset = load_frame_cache(args.frames)
    model, _ = load_checkpoint(args.ckpt)
    frames = [s for s in dataset if s.video_id == args.video]
    if not frames:
        print(f"no frames for video {args.video!r}", file=sys.stderr)
        return 1
    use_plain_cam = isinstance(model, FrameClassifier) and model.cam_weights() is not None
    pixels = np.stack([s.pixels for s in frames])
    probs = predict_proba(model, pixels)
    heatmaps, predictions = [], []
    for i, sample in enumerate(frames):
        pred = int(np.argmax(probs[i]))
        hm = cam(model, sample.pixels, pred) if use_plain_cam \
            else grad_cam(model, sample.pixels, pred)
        heatmaps.append(hm)
        from .data import CLASS_NAMES
        predictions.append({
            "frame_index": sample.frame_index,
            "pred_class": CLASS_NAMES[pred],
            "prob": float(probs[i, pred]),
        })
    bundle = export_review_bundle(args.video, pixels, heatmaps, predictions, args.out)
    print(f"review bundle written to {bundle}")
    return 0


HANDLERS = {
    "ingest": cmd_ingest,
    "split": cmd_split,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "mmd": cmd_mmd,
    "uncertainty": cmd_uncertainty,
    "serve": cmd_serve,
    "bundle": cmd_bundle,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_mod.load_config(args.config)
        return HANDLERS[args.command](args, cfg)
    except PocusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
