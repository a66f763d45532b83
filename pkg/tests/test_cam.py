"""Activation maps: plain CAM, Grad-CAM, point extraction, overlays, exports."""

import csv

import numpy as np
import pytest
import torch
from torch import nn

from pocus.data import IMAGE_SIZE
from pocus.errors import UnsupportedOperationError, ValidationError
from pocus.explain import (
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
from pocus.models import ClassifierConfig, FrameClassifier, build_frame_classifier

from conftest import tiny_frame_classifier


class _FixedMaps(nn.Module):
    """Backbone stub that returns stored feature maps for any input."""

    def __init__(self, maps: np.ndarray):
        super().__init__()
        self.register_buffer("maps", torch.from_numpy(maps.astype(np.float32)))

    def forward(self, x):
        return self.maps.unsqueeze(0).expand(x.shape[0], -1, -1, -1)


def fixed_map_model(maps: np.ndarray, head_weight: np.ndarray) -> FrameClassifier:
    config = ClassifierConfig(arch="mobile", n_classes=head_weight.shape[0],
                              dropout_rate=0.0)
    head = nn.Sequential(nn.Linear(maps.shape[0], head_weight.shape[0], bias=False))
    with torch.no_grad():
        head[0].weight.copy_(torch.from_numpy(head_weight.astype(np.float32)))
    model = FrameClassifier(config, _FixedMaps(maps), head, maps.shape[0])
    model.eval()
    return model


def _image():
    return np.random.default_rng(0).random((224, 224, 3)).astype(np.float32)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    den = float(np.linalg.norm(a) * np.linalg.norm(b))
    return float((a * b).sum() / den) if den > 0 else 1.0


class TestPlainCam:
    def test_constant_channel_constant_map(self):
        maps = np.ones((1, 7, 7))
        model = fixed_map_model(maps, np.ones((4, 1)))
        hm = cam(model, _image(), 0)
        assert not hm.is_zero
        np.testing.assert_allclose(hm.grid, 1.0, atol=1e-6)

    def test_zero_weights_flagged(self):
        model = fixed_map_model(np.ones((2, 7, 7)), np.zeros((4, 2)))
        hm = cam(model, _image(), 1)
        assert hm.is_zero
        assert (hm.grid == 0).all()

    def test_two_channel_hand_case(self):
        # A1 peaks at cell (row 2, col 3), A2 at (5, 5); weights (+1, -1)
        maps = np.zeros((2, 7, 7))
        maps[0, 2, 3] = 5.0
        maps[1, 5, 5] = 3.0
        weight = np.array([[1.0, -1.0], [0.0, 0.0]])
        expected_low = np.maximum(maps[0] - maps[1], 0.0)
        assert np.unravel_index(expected_low.argmax(), (7, 7)) == (2, 3)

        model = fixed_map_model(maps, weight)
        hm = cam(model, _image(), 0)
        point = max_activation_point(hm)
        scale = IMAGE_SIZE // 7
        assert 2 * scale <= point.y < 3 * scale
        assert 3 * scale <= point.x < 4 * scale

    def test_two_dense_head_unsupported(self):
        model = build_frame_classifier(ClassifierConfig(arch="vgg_head"), seed=0)
        with pytest.raises(UnsupportedOperationError, match="grad_cam"):
            cam(model, _image(), 0)


class TestGradCam:
    def test_matches_plain_cam_on_gap_head(self):
        for seed in range(6):
            model = tiny_frame_classifier(seed=seed)
            image = np.random.default_rng(seed).random((224, 224, 3)).astype(np.float32)
            class_id = seed % 4
            plain = cam(model, image, class_id)
            grad = grad_cam(model, image, class_id)
            assert (max_activation_point(plain).x, max_activation_point(plain).y) == \
                (max_activation_point(grad).x, max_activation_point(grad).y)
            assert cosine(plain.grid, grad.grid) >= 1 - 1e-4

    def test_linear_probe_hand_computed(self):
        # one 1x1 conv + GAP + linear head: the full map is analytic
        rng = np.random.default_rng(4)
        conv_w = rng.normal(size=(2, 3, 1, 1)).astype(np.float32)
        head_w = rng.normal(size=(4, 2)).astype(np.float32)
        config = ClassifierConfig(arch="mobile", dropout_rate=0.0)
        backbone = nn.Sequential(nn.Conv2d(3, 2, 1, bias=False))
        with torch.no_grad():
            backbone[0].weight.copy_(torch.from_numpy(conv_w))
        head = nn.Sequential(nn.Linear(2, 4, bias=False))
        with torch.no_grad():
            head[0].weight.copy_(torch.from_numpy(head_w))
        model = FrameClassifier(config, backbone, head, 2)
        model.eval()

        image = rng.random((224, 224, 3)).astype(np.float32)
        class_id = 2
        hm = grad_cam(model, image, class_id)

        # hand computation: maps A_k = sum_c conv_w[k,c] * image[...,c]
        maps = np.einsum("kc,hwc->khw", conv_w[:, :, 0, 0], image)
        n_cells = maps.shape[1] * maps.shape[2]
        alpha = head_w[class_id] / n_cells
        expected = np.maximum(np.einsum("k,khw->hw", alpha, maps), 0.0)
        np.testing.assert_allclose(hm.grid, expected, atol=1e-5)

    def test_all_negative_sum_gives_zero_map(self):
        maps = np.ones((1, 7, 7))
        model = fixed_map_model(maps, np.array([[-1.0], [1.0]]))
        hm = grad_cam(model, _image(), 0)
        assert hm.is_zero


class TestMaxActivationPoint:
    def _grid(self):
        return np.zeros((IMAGE_SIZE, IMAGE_SIZE))

    def test_delta_map(self):
        grid = self._grid()
        grid[20, 10] = 1.0  # y=20, x=10
        point = max_activation_point(Heatmap(grid, 0, "cam"))
        assert (point.x, point.y) == (10, 20)

    def test_raster_tie_break(self):
        grid = self._grid()
        grid[5, 5] = 1.0   # (x=5, y=5)
        grid[3, 7] = 1.0   # (x=7, y=3) - smaller y wins
        point = max_activation_point(Heatmap(grid, 0, "cam"))
        assert (point.x, point.y) == (7, 3)

    def test_constant_map_flagged_origin(self):
        point = max_activation_point(Heatmap(np.full((224, 224), 2.5), 0, "cam"))
        assert (point.x, point.y) == (0, 0)
        assert "uniform" in point.flags

    def test_point_bounds_validated(self):
        with pytest.raises(ValidationError):
            CamPoint(x=300, y=0)


class TestUpsamplingInvariant:
    def test_argmax_stays_in_low_res_footprint(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            maps = rng.random((1, 7, 7))
            model = fixed_map_model(maps, np.ones((4, 1)))
            hm = cam(model, _image(), 0)
            point = max_activation_point(hm)
            low_y, low_x = np.unravel_index(maps[0].argmax(), (7, 7))
            scale = IMAGE_SIZE / 7
            assert low_x * scale <= point.x < (low_x + 1) * scale
            assert low_y * scale <= point.y < (low_y + 1) * scale


class TestOverlay:
    def _setup(self):
        rng = np.random.default_rng(1)
        image = rng.random((224, 224, 3))
        grid = rng.random((224, 224))
        return image, Heatmap(grid, 0, "cam")

    def test_alpha_zero_original(self):
        image, hm = self._setup()
        np.testing.assert_allclose(overlay(image, hm, 0.0), image, atol=1e-12)

    def test_alpha_one_pure_colormap(self):
        image, hm = self._setup()
        pure = overlay(image, hm, 1.0)
        other = overlay(np.zeros_like(image), hm, 1.0)
        np.testing.assert_allclose(pure, other, atol=1e-12)

    def test_mid_alpha_convex_combination(self):
        image, hm = self._setup()
        colormap = overlay(np.zeros_like(image), hm, 1.0)
        blended = overlay(image, hm, 0.3)
        for y, x in [(0, 0), (100, 57), (223, 223)]:
            expected = 0.7 * image[y, x] + 0.3 * colormap[y, x]
            np.testing.assert_allclose(blended[y, x], expected, atol=1e-9)

    def test_alpha_bounds(self):
        image, hm = self._setup()
        with pytest.raises(ValidationError):
            overlay(image, hm, 1.5)


class TestPointExports:
    def _sets(self):
        return [
            CamPointSet("covid", [CamPoint(1, 2, "v1", 0), CamPoint(3, 4, "v1", 1)]),
            CamPointSet("healthy", [CamPoint(100, 200, "v2", 0)]),
        ]

    def test_csv_rows(self, tmp_path):
        path = tmp_path / "points.csv"
        save_points_csv(self._sets(), path)
        with path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["video_id", "frame_index", "class", "x", "y"]
        assert len(rows) == 4

    def test_round_trip_exact(self, tmp_path):
        path = tmp_path / "points.csv"
        original = self._sets()
        save_points_csv(original, path)
        loaded = load_points_csv(path)
        by_label = {s.label: s for s in loaded}
        for pset in original:
            back = by_label[pset.label]
            np.testing.assert_array_equal(pset.coords(), back.coords())
            assert [p.video_id for p in pset.points] == [p.video_id for p in back.points]

    def test_scatter_export_artifacts(self, tmp_path):
        artifacts = cam_scatter_export(self._sets(), tmp_path / "scatter")
        assert artifacts["points_csv"].exists()
        assert artifacts["scatter"].exists()
        assert artifacts["density_covid"].exists()

    def test_empty_class_warns_and_omitted(self, tmp_path):
        sets = self._sets() + [CamPointSet("pneumonia", [])]
        with pytest.warns(UserWarning, match="pneumonia"):
            artifacts = cam_scatter_export(sets, tmp_path / "scatter")
        assert "density_pneumonia" not in artifacts


class TestReviewBundle:
    def test_bundle_layout(self, tmp_path):
        rng = np.random.default_rng(2)
        frames = rng.random((3, 224, 224, 3)).astype(np.float32)
        heatmaps = [Heatmap(rng.random((224, 224)), 0, "cam") for _ in range(3)]
        predictions = [{"frame_index": i, "pred_class": "covid", "prob": 0.9}
                       for i in range(3)]
        bundle = export_review_bundle("vid7", frames, heatmaps, predictions, tmp_path)
        assert (bundle / "frame000.png").exists()
        assert (bundle / "frame002_overlay.png").exists()
        import json
        payload = json.loads((bundle / "predictions.json").read_text())
        assert payload["video_id"] == "vid7"
        assert len(payload["frames"]) == 3
