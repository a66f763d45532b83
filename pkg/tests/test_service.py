"""HTTP service contract: schemas, decoding, limits, ensemble semantics."""

import base64
import io
import json

import cv2
import numpy as np
import pytest
from fastapi.testclient import TestClient

from pocus.data import CLASS_NAMES, crop_square, preprocess
from pocus.models import ClassifierConfig, build_frame_classifier, predict_proba, save_checkpoint
from pocus.service import ServiceConfig, create_app

from conftest import write_video


@pytest.fixture(scope="module")
def checkpoint_dir(tmp_path_factory):
    ckpt_dir = tmp_path_factory.mktemp("ckpt")
    model = build_frame_classifier(
        ClassifierConfig(arch="mobile", dropout_rate=0.5), seed=0)
    for fold in range(5):
        save_checkpoint(model, ckpt_dir / f"mobile_fold{fold}.bin",
                        sidecar={"fold": fold, "split_hash": "fixture"})
    return ckpt_dir


@pytest.fixture(scope="module")
def client(checkpoint_dir):
    config = ServiceConfig.from_checkpoint_dir(checkpoint_dir, "mobile", max_upload_mb=1)
    return TestClient(create_app(config))


@pytest.fixture(scope="module")
def png_bytes():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 255, (160, 200, 3), dtype=np.uint8)
    ok, buf = cv2.imencode(".png", img)
    assert ok
    return buf.tobytes(), img


def _post(client, payload, media_type="image/png", options=None, name="upload.png"):
    data = {"options": json.dumps(options)} if options else {}
    return client.post("/predict", files={"file": (name, io.BytesIO(payload), media_type)},
                       data=data)


class TestEndpoints:
    def test_health(self, client):
        response = client.get("/health")
        assert response.status_code == 200
        assert response.json() == {"status": "ok"}

    def test_model_lists_five_checkpoints(self, client):
        payload = client.get("/model").json()
        assert payload["api_version"] == "1"
        assert payload["ensemble"] is True
        assert len(payload["fold_checkpoints"]) == 5
        assert payload["classes"] == list(CLASS_NAMES)

    def test_model_reproducible_across_restarts(self, checkpoint_dir):
        config = ServiceConfig.from_checkpoint_dir(checkpoint_dir, "mobile")
        a = TestClient(create_app(config)).get("/model").content
        b = TestClient(create_app(config)).get("/model").content
        assert a == b

    def test_missing_checkpoint_refuses_startup(self, checkpoint_dir, tmp_path):
        partial = tmp_path / "partial"
        partial.mkdir()
        for fold in range(4):  # only 4 of 5
            (partial / f"mobile_fold{fold}.bin").write_bytes(
                (checkpoint_dir / f"mobile_fold{fold}.bin").read_bytes())
            (partial / f"mobile_fold{fold}.json").write_bytes(
                (checkpoint_dir / f"mobile_fold{fold}.json").read_bytes())
        config = ServiceConfig.from_checkpoint_dir(partial, "mobile")
        with pytest.raises(FileNotFoundError, match="mobile_fold4.bin"):
            create_app(config)


class TestPredictImage:
    def test_schema_and_simplex(self, client, png_bytes):
        payload, _ = png_bytes
        response = _post(client, payload)
        assert response.status_code == 200
        body = response.json()
        assert body["api_version"] == "1"
        assert len(body["frames"]) == 1
        frame = body["frames"][0]
        assert frame["frame_index"] == 0
        assert len(frame["probs"]) == 4
        assert sum(frame["probs"]) == pytest.approx(1.0, abs=1e-5)
        assert frame["pred_class"] in CLASS_NAMES
        assert body["video"]["probs"] == frame["probs"]

    def test_ensemble_of_identical_checkpoints_matches_single_model(
            self, client, png_bytes, checkpoint_dir):
        payload, img = png_bytes
        response = _post(client, payload)
        probs = np.array(response.json()["frames"][0]["probs"])
        model = build_frame_classifier(
            ClassifierConfig(arch="mobile", dropout_rate=0.5), seed=0)
        rgb = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
        direct = predict_proba(model, preprocess(crop_square(rgb))[None])[0]
        np.testing.assert_array_equal(probs, direct.astype(np.float64))

    def test_heatmap_inline_png(self, client, png_bytes):
        payload, _ = png_bytes
        response = _post(client, payload, options={"want_heatmap": True})
        ref = response.json()["frames"][0]["heatmap_ref"]
        assert ref.startswith("data:image/png;base64,")
        decoded = base64.b64decode(ref.split(",", 1)[1])
        img = cv2.imdecode(np.frombuffer(decoded, np.uint8), cv2.IMREAD_COLOR)
        assert img.shape == (224, 224, 3)

    def test_confidence_fields(self, client, png_bytes):
        payload, _ = png_bytes
        response = _post(client, payload,
                         options={"want_confidence": True, "n_passes": 4, "seed": 5})
        frame = response.json()["frames"][0]
        assert 0.0 <= frame["epistemic_c"] <= 1.0
        assert 0.0 <= frame["aleatoric_c"] <= 1.0

    def test_seeded_confidence_reproducible(self, client, png_bytes):
        payload, _ = png_bytes
        opts = {"want_confidence": True, "n_passes": 4, "seed": 11}
        a = _post(client, payload, options=opts).json()["frames"][0]
        b = _post(client, payload, options=opts).json()["frames"][0]
        assert a["epistemic_c"] == b["epistemic_c"]
        assert a["aleatoric_c"] == b["aleatoric_c"]

    def test_deterministic_probs_across_requests(self, client, png_bytes):
        payload, _ = png_bytes
        a = _post(client, payload).json()["frames"][0]["probs"]
        b = _post(client, payload).json()["frames"][0]["probs"]
        assert a == b


class TestPredictVideo:
    def test_five_second_video_fifteen_frames(self, client, tmp_path):
        video = write_video(tmp_path / "clip.mp4", 30.0, 150, size=96)
        response = _post(client, video.read_bytes(), media_type="video/mp4",
                         name="clip.mp4")
        assert response.status_code == 200
        body = response.json()
        assert len(body["frames"]) == 15
        frame_probs = np.array([f["probs"] for f in body["frames"]])
        np.testing.assert_allclose(np.array(body["video"]["probs"]),
                                   frame_probs.mean(axis=0), atol=1e-6)


class TestPredictErrors:
    def test_text_upload_rejected(self, client):
        response = _post(client, b"just some text", media_type="text/plain",
                         name="notes.txt")
        assert response.status_code == 400

    def test_undecodable_octet_stream(self, client):
        response = _post(client, b"\x00\x01\x02\x03" * 100,
                         media_type="application/octet-stream", name="blob.bin")
        assert response.status_code == 400
        assert "undecodable" in response.json()["detail"]

    def test_oversized_payload_413(self, client):
        big = b"\x00" * (1024 * 1024 + 1)  # limit is 1 MB in the fixture
        response = _post(client, big, media_type="application/octet-stream")
        assert response.status_code == 413

    def test_empty_payload_rejected(self, client):
        response = _post(client, b"")
        assert response.status_code == 400

    def test_unknown_option_rejected(self, client, png_bytes):
        payload, _ = png_bytes
        response = _post(client, payload, options={"bogus": 1})
        assert response.status_code == 400
