"""CLI end-to-end over a synthetic corpus, plus per-command contracts."""

import csv
import json

import numpy as np
import pytest

from pocus.cli import main

from conftest import write_manifest, write_video


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Four tiny videos (two classes), a manifest, frames, split and checkpoints."""
    root = tmp_path_factory.mktemp("corpus")
    rows = []
    labels = ["covid", "healthy", "covid", "healthy"]
    for i, label in enumerate(labels):
        video = write_video(root / f"v{i}.mp4", 12.0, 24, seed=i)  # 2 s -> 6 frames
        rows.append({"id": f"v{i}", "path": str(video), "label": label,
                     "probe": "convex", "kind": "video", "fps": "12"})
    manifest = write_manifest(root / "manifest.csv", rows)

    frames = root / "frames"
    assert main(["ingest", "--manifest", str(manifest), "--out", str(frames)]) == 0

    split = root / "split.json"
    assert main(["split", "--frames", str(frames), "--folds", "2",
                 "--seed", "7", "--out", str(split)]) == 0

    ckpt = root / "ckpt"
    assert main(["train", "--frames", str(frames), "--split", str(split),
                 "--arch", "mobile", "--ckpt-dir", str(ckpt),
                 "--epochs", "1", "--seed", "0"]) == 0
    return root


def test_ingest_wrote_frame_cache(corpus):
    frames = corpus / "frames"
    pngs = list(frames.rglob("*.png"))
    assert len(pngs) == 24  # 4 videos x 6 frames
    assert (frames / "covid").is_dir() and (frames / "healthy").is_dir()


def test_split_file_schema(corpus):
    payload = json.loads((corpus / "split.json").read_text())
    assert payload["n_folds"] == 2
    assert set(payload["assignment"]) == {"v0", "v1", "v2", "v3"}


def test_train_wrote_checkpoints_and_logs(corpus):
    ckpt = corpus / "ckpt"
    for fold in range(2):
        assert (ckpt / f"mobile_fold{fold}.bin").exists()
        sidecar = json.loads((ckpt / f"mobile_fold{fold}.json").read_text())
        assert sidecar["arch"] == "mobile"
        assert "split_hash" in sidecar
        assert (ckpt / f"mobile_fold{fold}.log.jsonl").exists()


def test_evaluate_writes_report_bundle(corpus, tmp_path):
    out = tmp_path / "report"
    code = main(["evaluate", "--frames", str(corpus / "frames"),
                 "--split", str(corpus / "split.json"),
                 "--arch", "mobile", "--ckpt-dir", str(corpus / "ckpt"),
                 "--out", str(out)])
    assert code == 0
    report = json.loads((out / "frame_report.json").read_text())
    assert 0.0 <= report["accuracy"] <= 1.0
    assert (out / "frame_confusion.csv").exists()
    assert (out / "frame_panels.png").exists()
    assert (out / "video_report.json").exists()


def test_explain_exports_points_and_plots(corpus, tmp_path):
    out = tmp_path / "explain"
    code = main(["explain", "--frames", str(corpus / "frames"),
                 "--ckpt", str(corpus / "ckpt" / "mobile_fold0.bin"),
                 "--out", str(out)])
    assert code == 0
    points = out / "cam_points.csv"
    assert points.exists()
    with points.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 24
    assert {r["class"] for r in rows} <= {"covid", "healthy"}


def test_mmd_command_prints_statistics(corpus, tmp_path, capsys):
    points = tmp_path / "points.csv"
    rng = np.random.default_rng(0)
    with points.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "frame_index", "class", "x", "y"])
        for i in range(30):
            writer.writerow(["v", i, "covid", rng.integers(0, 100), rng.integers(0, 100)])
        for i in range(30):
            writer.writerow(["w", i, "healthy", rng.integers(100, 224), rng.integers(100, 224)])
    code = main(["mmd", "--points", str(points), "--n-resamples", "200", "--seed", "1"])
    assert code == 0
    out = capsys.readouterr().out
    assert "MMD^2=" in out and "sigma=" in out and "p=" in out


def test_uncertainty_command_writes_csv(corpus, tmp_path):
    out = tmp_path / "confidence.csv"
    code = main(["uncertainty", "--frames", str(corpus / "frames"),
                 "--ckpt", str(corpus / "ckpt" / "mobile_fold0.bin"),
                 "--out", str(out), "--n-passes", "4"])
    assert code == 0
    with out.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 24
    assert set(rows[0]) == {"video_id", "frame_index", "pred_class",
                            "epistemic_c", "aleatoric_c", "correct"}
    for row in rows:
        assert 0.0 <= float(row["epistemic_c"]) <= 1.0


def test_bundle_command(corpus, tmp_path):
    out = tmp_path / "bundles"
    code = main(["bundle", "--frames", str(corpus / "frames"),
                 "--ckpt", str(corpus / "ckpt" / "mobile_fold0.bin"),
                 "--video", "v0", "--out", str(out)])
    assert code == 0
    bundle = out / "v0"
    assert (bundle / "predictions.json").exists()
    assert len(list(bundle.glob("frame*_overlay.png"))) == 6


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_module_error_maps_to_exit_1(tmp_path):
    code = main(["split", "--frames", str(tmp_path / "absent"),
                 "--folds", "2", "--out", str(tmp_path / "s.json")])
    assert code == 1


def test_config_file_defaults(corpus, tmp_path, monkeypatch):
    config = tmp_path / "pocus.yaml"
    config.write_text("train:\n  epochs: 1\n  seed: 3\naugment:\n  max_rotation_deg: 5\n")
    monkeypatch.setenv("POCUS_CONFIG", str(config))
    ckpt = tmp_path / "ckpt2"
    code = main(["train", "--frames", str(corpus / "frames"),
                 "--split", str(corpus / "split.json"),
                 "--arch", "mobile", "--ckpt-dir", str(ckpt)])
    assert code == 0
    sidecar = json.loads((ckpt / "mobile_fold0.json").read_text())
    assert sidecar["seed"] == 3
