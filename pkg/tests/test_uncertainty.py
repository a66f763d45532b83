"""Confidence formula, stochastic scoring and correctness correlation."""

import numpy as np
import pytest

from pocus.data import AugmentationPolicy
from pocus.errors import ValidationError
from pocus.models import ClassifierConfig, build_frame_classifier
from pocus.uncertainty import (
    aleatoric_confidence,
    confidence_from_std,
    correlate_with_correctness,
    epistemic_confidence,
    scores_from_stack,
)


def pearson_oracle(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    num = n * (x * y).sum() - x.sum() * y.sum()
    den = np.sqrt(n * (x * x).sum() - x.sum() ** 2) * np.sqrt(n * (y * y).sum() - y.sum() ** 2)
    return num / den


class TestConfidenceFormula:
    def test_anchor_points_exact(self):
        assert confidence_from_std(0.0) == 1.0
        assert confidence_from_std(0.5) == 0.0
        assert confidence_from_std(0.1) == pytest.approx(0.8, abs=1e-15)

    def test_affine_decreasing(self):
        sigmas = np.linspace(0.0, 0.5, 11)
        values = [confidence_from_std(s) for s in sigmas]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_domain_enforced(self):
        with pytest.raises(ValidationError):
            confidence_from_std(0.6)
        with pytest.raises(ValidationError):
            confidence_from_std(-0.1)

    def test_tiny_overshoot_clipped(self):
        assert confidence_from_std(0.5 + 5e-10) == 0.0
        assert confidence_from_std(-5e-10) == 1.0


class TestScoresFromStack:
    def test_hand_stack(self):
        # winning-class probs: five 0.6 and five 0.8 -> sigma ~ 0.1054, c ~ 0.789
        stack = np.zeros((10, 1, 4))
        winning = [0.6] * 5 + [0.8] * 5
        for i, p in enumerate(winning):
            stack[i, 0, 0] = p
            stack[i, 0, 1:] = (1 - p) / 3
        [score] = scores_from_stack(stack, "epistemic")
        assert score.winning_class == 0
        assert score.raw_std == pytest.approx(np.std(winning, ddof=1))
        assert score.raw_std == pytest.approx(0.10541, abs=1e-5)
        assert score.value == pytest.approx(0.78918, abs=1e-5)

    def test_identical_passes_give_one(self):
        stack = np.tile([0.4, 0.3, 0.2, 0.1], (10, 3, 1))
        for score in scores_from_stack(stack, "epistemic"):
            assert score.value == 1.0
            assert score.raw_std == 0.0

    def test_winner_is_argmax_of_mean(self):
        rng = np.random.default_rng(0)
        stack = rng.dirichlet(np.ones(4), size=(10, 6))
        winners = [s.winning_class for s in scores_from_stack(stack, "epistemic")]
        np.testing.assert_array_equal(winners, stack.mean(axis=0).argmax(axis=1))

    def test_overshoot_floors_at_zero(self):
        # extreme alternation: ddof=1 std of {0,1}x5 is ~0.527 > 0.5
        stack = np.zeros((10, 1, 4))
        stack[::2, 0, 0] = 1.0
        stack[1::2, 0, 1] = 1.0
        [score] = scores_from_stack(stack, "epistemic")
        assert score.raw_std > 0.5
        assert score.value == 0.0

    def test_tie_goes_to_lowest_class_index(self):
        stack = np.tile([0.25, 0.25, 0.25, 0.25], (5, 1, 1))
        [score] = scores_from_stack(stack, "epistemic")
        assert score.winning_class == 0


@pytest.fixture()
def batch():
    return np.random.default_rng(0).random((3, 224, 224, 3)).astype(np.float32)


class TestModelConfidence:

    def test_dropout_zero_gives_one(self, batch):
        model = build_frame_classifier(
            ClassifierConfig(arch="mobile", dropout_rate=0.0), seed=0)
        for score in epistemic_confidence(model, batch, seed=0):
            assert score.value == 1.0

    def test_epistemic_seed_determinism(self, batch):
        model = build_frame_classifier(
            ClassifierConfig(arch="mobile", dropout_rate=0.5), seed=0)
        a = epistemic_confidence(model, batch, seed=42)
        b = epistemic_confidence(model, batch, seed=42)
        assert [s.value for s in a] == [s.value for s in b]
        assert any(s.raw_std > 0 for s in a)

    def test_aleatoric_identity_policy_gives_one(self, batch):
        model = build_frame_classifier(
            ClassifierConfig(arch="mobile", dropout_rate=0.5), seed=0)
        scores = aleatoric_confidence(model, batch, AugmentationPolicy.identity(), seed=0)
        for score in scores:
            assert score.value == 1.0
            assert score.kind == "aleatoric"

    def test_aleatoric_seed_determinism(self, batch):
        model = build_frame_classifier(
            ClassifierConfig(arch="mobile", dropout_rate=0.0), seed=0)
        policy = AugmentationPolicy(rng_seed=1)
        a = aleatoric_confidence(model, batch, policy, seed=3)
        b = aleatoric_confidence(model, batch, policy, seed=3)
        assert [s.value for s in a] == [s.value for s in b]


class TestCorrelation:
    def test_scores_equal_indicator(self):
        report = correlate_with_correctness([1, 1, 0, 0], [1, 1, 0, 0])
        assert report.rho == pytest.approx(1.0)

    def test_hand_case(self):
        conf = [0.9, 0.8, 0.2, 0.1]
        correct = [1, 1, 0, 0]
        report = correlate_with_correctness(conf, correct)
        assert report.rho == pytest.approx(pearson_oracle(conf, correct), abs=1e-12)
        assert report.rho == pytest.approx(0.98995, abs=1e-5)
        assert report.mean_conf_correct == pytest.approx(0.85)
        assert report.mean_conf_wrong == pytest.approx(0.15)
        assert report.p_value is not None and 0 <= report.p_value <= 1

    def test_zero_variance_degenerate(self):
        report = correlate_with_correctness([0.5, 0.5, 0.5], [1, 0, 1])
        assert report.degenerate
        assert report.rho is None

    def test_too_few_samples(self):
        with pytest.raises(ValidationError):
            correlate_with_correctness([0.5, 0.6], [1, 0])

    def test_non_binary_correctness_rejected(self):
        with pytest.raises(ValidationError):
            correlate_with_correctness([0.5, 0.6, 0.7], [1, 2, 0])
