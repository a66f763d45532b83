"""HTTP inference service: ensemble prediction, heatmaps, confidence.

Endpoints:
    GET  /health   liveness probe
    GET  /model    loaded checkpoints and class order
    POST /predict  multipart upload (field ``file``, optional JSON ``options``)

Uploads are decoded in memory (images) or through a temporary file (videos,
sampled at 3 Hz with a 30-frame cap), never stored.  Heatmaps come back
inline as base64 PNGs, keeping the service stateless.  Stochastic options
(confidence scores) run on the first fold model under a per-request seed.
"""

from __future__ import annotations

import base64
import json
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.middleware.cors import CORSMiddleware

from .data import (
    CLASS_NAMES,
    AugmentationPolicy,
    Label,
    MediaKind,
    Probe,
    RecordingMeta,
    crop_square,
    extract_frames,
    preprocess,
)
from .errors import ConfigError
from .explain import Heatmap, cam, grad_cam, overlay
from .metrics import ensemble_predict
from .models import FrameClassifier, load_checkpoint, predict_proba
from .uncertainty import aleatoric_confidence, epistemic_confidence

API_VERSION = "1"

ALLOWED_MEDIA = (
    "image/png", "image/jpeg", "image/bmp",
    "video/mp4", "video/avi", "video/x-msvideo", "video/quicktime",
    "application/octet-stream",
)


@dataclass
class ServiceConfig:
    checkpoints: list[Path]
    ensemble: bool = True
    max_upload_mb: int = 50
    target_hz: float = 3.0
    max_frames: int = 30
    default_n_passes: int = 10
    allowed_media: tuple[str, ...] = ALLOWED_MEDIA
    tta_policy: AugmentationPolicy = field(default_factory=AugmentationPolicy)
    frontend_dir: Path | None = None  # serve the built screening UI from /

    @classmethod
    def from_checkpoint_dir(cls, ckpt_dir: str | Path, arch: str,
                            n_folds: int = 5, ensemble: bool = True,
                            **kwargs) -> "ServiceConfig":
        paths = [Path(ckpt_dir) / f"{arch}_fold{k}.bin" for k in range(n_folds)] \
            if ensemble else [Path(ckpt_dir) / f"{arch}_fold0.bin"]
        return cls(checkpoints=paths, ensemble=ensemble, **kwargs)


@dataclass
class PredictOptions:
    want_heatmap: bool = False
    want_confidence: bool = False
    n_passes: int = 10
    seed: int = 0

    @classmethod
    def parse(cls, raw: str | None, default_n_passes: int) -> "PredictOptions":
        if not raw:
            return cls(n_passes=default_n_passes)
        try:
            payload = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise HTTPException(status_code=400, detail=f"options is not valid JSON: {exc}")
        known = {"want_heatmap", "want_confidence", "n_passes", "seed"}
        unknown = set(payload) - known
        if unknown:
            raise HTTPException(status_code=400, detail=f"unknown options: {sorted(unknown)}")
        return cls(
            want_heatmap=bool(payload.get("want_heatmap", False)),
            want_confidence=bool(payload.get("want_confidence", False)),
            n_passes=int(payload.get("n_passes", default_n_passes)),
            seed=int(payload.get("seed", 0)),
        )


def _decode_image(payload: bytes) -> np.ndarray | None:
    buf = np.frombuffer(payload, dtype=np.uint8)
    img = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED)
    if img is None:
        return None
    if img.ndim == 3 and img.shape[2] >= 3:
        img = cv2.cvtColor(img[:, :, :3], cv2.COLOR_BGR2RGB)
    return img


def _decode_video(payload: bytes, target_hz: float, max_frames: int) -> list[np.ndarray] | None:
    with tempfile.NamedTemporaryFile(suffix=".mp4") as tmp:
        tmp.write(payload)
        tmp.flush()
        cap = cv2.VideoCapture(tmp.name)
        fps = cap.get(cv2.CAP_PROP_FPS)
        cap.release()
        if not fps or fps <= 0:
            return None
        rec = RecordingMeta(
            id="upload", path=Path(tmp.name), label=Label.HEALTHY,
            probe=Probe.CONVEX, kind=MediaKind.VIDEO, fps=float(fps),
        )
        try:
            raw = extract_frames(rec, target_hz=min(target_hz, fps), max_frames=max_frames)
        except IOError:
            return None
        return [f.pixels for f in raw] or None


def _heatmap_png_base64(frame: np.ndarray, hm: Heatmap, alpha: float = 0.4) -> str:
    blended = overlay(frame, hm, alpha)
    bgr = cv2.cvtColor((blended * 255).astype(np.uint8), cv2.COLOR_RGB2BGR)
    ok, encoded = cv2.imencode(".png", bgr)
    if not ok:
        raise HTTPException(status_code=500, detail="heatmap encoding failed")
    return "data:image/png;base64," + base64.b64encode(encoded.tobytes()).decode("ascii")


def create_app(config: ServiceConfig) -> FastAPI:
    """Load the configured checkpoints and expose the inference endpoints.

    Startup is refused (FileNotFoundError) when any checkpoint is missing.
    """
    missing = [str(p) for p in config.checkpoints if not Path(p).exists()]
    if missing:
        raise FileNotFoundError(f"missing checkpoint file(s): {', '.join(missing)}")
    if not config.checkpoints:
        raise ConfigError("at least one checkpoint is required")

    models = []
    for path in config.checkpoints:
        model, _meta = load_checkpoint(path)
        model.eval()
        models.append(model)
    arch = models[0].config.arch
    stochastic_lock = threading.Lock()

    app = FastAPI(title="pocus screening service", version=API_VERSION)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    model_info = {
        "api_version": API_VERSION,
        "arch": arch,
        "ensemble": config.ensemble,
        "fold_checkpoints": [Path(p).name for p in config.checkpoints],
        "classes": list(CLASS_NAMES),
        "n_classes": len(CLASS_NAMES),
    }

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/model")
    def model_endpoint() -> dict:
        return model_info

    @app.post("/predict")
    async def predict(file: UploadFile = File(...), options: str | None = Form(None)) -> dict:
        opts = PredictOptions.parse(options, config.default_n_passes)
        payload = await file.read()
        if not payload:
            raise HTTPException(status_code=400, detail="empty payload")
        if len(payload) > config.max_upload_mb * 1024 * 1024:
            raise HTTPException(status_code=413, detail="payload exceeds upload limit")
        media_type = file.content_type or "application/octet-stream"
        if media_type not in config.allowed_media:
            raise HTTPException(status_code=400,
                                detail=f"media type {media_type!r} not allowed")

        frames: list[np.ndarray] | None = None
        if media_type.startswith("image/") or media_type == "application/octet-stream":
            img = _decode_image(payload)
            if img is not None:
                frames = [img]
        if frames is None:
            frames = _decode_video(payload, config.target_hz, config.max_frames)
        if frames is None:
            raise HTTPException(status_code=400, detail="undecodable media")

        batch = np.stack([preprocess(crop_square(f)) for f in frames])
        if config.ensemble and len(models) > 1:
            probs = ensemble_predict(models, batch)
        else:
            probs = predict_proba(models[0], batch)

        epi = ale = None
        if opts.want_confidence:
            with stochastic_lock:
                epi = epistemic_confidence(models[0], batch,
                                           n_passes=opts.n_passes, seed=opts.seed)
                ale = aleatoric_confidence(models[0], batch, config.tta_policy,
                                           n_passes=opts.n_passes, seed=opts.seed)

        frame_entries = []
        for i in range(len(batch)):
            pred_class = int(np.argmax(probs[i]))
            entry: dict = {
                "frame_index": i,
                "probs": [float(v) for v in probs[i]],
                "pred_class": CLASS_NAMES[pred_class],
            }
            if epi is not None and ale is not None:
                entry["epistemic_c"] = epi[i].value
                entry["aleatoric_c"] = ale[i].value
            if opts.want_heatmap:
                model = models[0]
                with stochastic_lock:
                    if isinstance(model, FrameClassifier) and model.cam_weights() is not None:
                        hm = cam(model, batch[i], pred_class)
                    else:
                        hm = grad_cam(model, batch[i], pred_class)
                entry["heatmap_ref"] = _heatmap_png_base64(batch[i], hm)
            frame_entries.append(entry)

        video_probs = probs.mean(axis=0)
        return {
            "api_version": API_VERSION,
            "frames": frame_entries,
            "video": {
                "probs": [float(v) for v in video_probs],
                "pred_class": CLASS_NAMES[int(np.argmax(video_probs))],
            },
            "model_info": model_info,
        }

    if config.frontend_dir is not None:
        from fastapi.staticfiles import StaticFiles

        ui_dir = Path(config.frontend_dir)
        if not (ui_dir / "index.html").exists():
            raise ConfigError(f"frontend dir {ui_dir} has no index.html (run its build)")
        # mounted last: the API routes above keep precedence
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
