"""
Unit tests for classification metrics, threshold selection and Spearman correlation.
"""

import numpy as np
import pytest

from rigidity_xai.metrics import (
    MetricsReport,
    ScoredSet,
    auprc,
    auroc,
    candidate_thresholds,
    confusion_metrics,
    optimal_threshold,
    spearman,
)
from rigidity_xai.models import ArgumentError, UndefinedMetricError


def _pair_count_auroc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = np.sum(pos[:, None] > neg[None, :]) + 0.5 * np.sum(pos[:, None] == neg[None, :])
    return wins / (len(pos) * len(neg))


class TestScoredSet:
    """Test ScoredSet validation."""

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            ScoredSet([0.1, 0.2], [1])

    def test_non_binary_labels(self):
        with pytest.raises(ArgumentError):
            ScoredSet([0.1, 0.2], [0, 2])

    def test_non_finite_scores(self):
        with pytest.raises(ArgumentError):
            ScoredSet([0.1, np.nan], [0, 1])


class TestAuroc:
    """Test auroc."""

    def test_perfect_separation(self):
        assert auroc(ScoredSet([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])) == 1.0

    def test_three_of_four_pairs(self):
        assert auroc(ScoredSet([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])) == pytest.approx(0.75)

    def test_all_ties(self):
        assert auroc(ScoredSet([0.3] * 6, [0, 1, 0, 1, 1, 0])) == 0.5

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            auroc(ScoredSet([0.1, 0.2], [1, 1]))

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(0)
        scores = rng.normal(size=300)
        labels = rng.integers(0, 2, 300)
        base = auroc(ScoredSet(scores, labels))
        assert auroc(ScoredSet(np.exp(3 * scores), labels)) == pytest.approx(base, abs=1e-12)

    def test_flipped_labels(self):
        rng = np.random.default_rng(1)
        scores = np.round(rng.random(200), 1)
        labels = rng.integers(0, 2, 200)
        flipped = auroc(ScoredSet(scores, 1 - labels))
        assert flipped == pytest.approx(1.0 - auroc(ScoredSet(scores, labels)), abs=1e-12)

    def test_matches_pair_counting(self):
        rng = np.random.default_rng(2)
        for trial in range(200):
            n = int(rng.integers(2, 500))
            scores = rng.random(n)
            if trial % 2:
                scores = np.round(scores, 1)
            labels = rng.integers(0, 2, n)
            labels[0], labels[1] = 0, 1
            expected = _pair_count_auroc(scores, labels)
            assert auroc(ScoredSet(scores, labels)) == pytest.approx(expected, abs=1e-12)


class TestAuprc:
    """Test auprc."""

    def test_perfect_ranking(self):
        assert auprc(ScoredSet([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])) == pytest.approx(1.0)

    def test_single_positive_first(self):
        assert auprc(ScoredSet([0.9, 0.5, 0.4, 0.1], [1, 0, 0, 0])) == pytest.approx(1.0)

    def test_step_integral(self):
        # ranks: pos, neg, pos -> precisions 1 and 2/3 at recall 0.5 and 1.0
        value = auprc(ScoredSet([0.9, 0.8, 0.7], [1, 0, 1]))
        assert value == pytest.approx(0.5 * 1.0 + 0.5 * 2.0 / 3.0)

    def test_random_scorer_near_prevalence(self):
        rng = np.random.default_rng(4)
        labels = (rng.random(10000) < 0.3).astype(int)
        value = auprc(ScoredSet(rng.random(10000), labels))
        assert abs(value - labels.mean()) < 0.02

    def test_no_positives(self):
        with pytest.raises(UndefinedMetricError):
            auprc(ScoredSet([0.1, 0.2], [0, 0]))


class TestConfusionMetrics:
    """Test confusion_metrics."""

    @pytest.fixture
    def ten_point_set(self):
        # TP=2, FP=1, FN=1, TN=6 at threshold 0.5
        scores = [0.9, 0.8, 0.7, 0.3, 0.45, 0.4, 0.3, 0.2, 0.1, 0.05]
        labels = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0]
        return ScoredSet(scores, labels)

    def test_hand_counts(self, ten_point_set):
        report = confusion_metrics(ten_point_set, 0.5)
        assert (report.tp, report.fp, report.fn, report.tn) == (2, 1, 1, 6)
        assert report.f1 == pytest.approx(2 / 3)
        assert report.sensitivity == pytest.approx(2 / 3)
        assert report.specificity == pytest.approx(6 / 7)
        assert report.accuracy == pytest.approx(0.8)
        assert report.n == 10

    def test_threshold_below_minimum(self, ten_point_set):
        report = confusion_metrics(ten_point_set, 0.0)
        assert report.sensitivity == 1.0
        assert report.specificity == 0.0

    def test_threshold_above_maximum(self, ten_point_set):
        report = confusion_metrics(ten_point_set, 1.0)
        assert report.sensitivity == 0.0
        assert report.specificity == 1.0
        assert "precision_undefined" in report.flags

    def test_score_equal_to_threshold_is_positive(self):
        assert confusion_metrics(ScoredSet([0.5], [1]), 0.5).tp == 1

    def test_single_class_flags(self):
        report = confusion_metrics(ScoredSet([0.2, 0.7], [0, 0]), 0.5)
        assert report.auroc is None
        assert report.auprc is None
        assert "sensitivity_undefined" in report.flags

    def test_empty_set(self):
        with pytest.raises(ArgumentError):
            confusion_metrics(ScoredSet([], []), 0.5)

    def test_dict_round_trip(self, ten_point_set):
        report = confusion_metrics(ten_point_set, 0.5)
        data = report.to_dict()
        assert data["counts"] == {"tp": 2, "fp": 1, "tn": 6, "fn": 1}
        assert MetricsReport.from_dict(data) == report


class TestOptimalThreshold:
    """Test optimal_threshold."""

    def test_separated_set(self):
        s = ScoredSet([0.1, 0.2, 0.3, 0.7, 0.8], [0, 0, 0, 1, 1])
        threshold = optimal_threshold(s)
        assert 0.3 < threshold <= 0.7
        assert confusion_metrics(s, threshold).f1 == 1.0

    def test_identical_scores_predict_all_positive(self):
        s = ScoredSet([0.4] * 5, [0, 1, 0, 1, 0])
        threshold = optimal_threshold(s)
        assert threshold == -np.inf
        assert confusion_metrics(s, threshold).sensitivity == 1.0

    def test_matches_exhaustive_scan(self):
        scores = np.array([0.95, 0.9, 0.8, 0.75, 0.6, 0.55, 0.5, 0.3, 0.2, 0.1])
        labels = np.array([1, 0, 1, 1, 0, 1, 0, 0, 1, 0])
        s = ScoredSet(scores, labels)
        scan = []
        for t in candidate_thresholds(scores):
            report = confusion_metrics(s, t)
            scan.append((-report.f1, -report.sensitivity, t))
        assert optimal_threshold(s) == min(scan)[2]

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            optimal_threshold(ScoredSet([0.1, 0.9], [1, 1]))

    def test_candidates_include_sentinels(self):
        candidates = candidate_thresholds(np.array([0.2, 0.4, 0.4]))
        assert candidates.tolist() == [-np.inf, pytest.approx(0.3), np.inf]


class TestSpearman:
    """Test spearman."""

    def test_increasing(self):
        assert spearman([1, 2, 3, 4], [10, 20, 25, 90]) == pytest.approx(1.0)

    def test_reversed(self):
        assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)

    def test_hand_example(self):
        assert spearman([1, 2, 3, 4, 5], [1, 3, 2, 5, 4]) == pytest.approx(0.8)

    def test_monotone_transform_invariance(self):
        a = [0.3, 0.1, 0.7, 0.2, 0.9]
        b = [5.0, 1.0, 3.0, 2.0, 4.0]
        assert spearman(a, b) == pytest.approx(spearman(np.exp(a), np.asarray(b) ** 3))

    def test_constant_vector(self):
        with pytest.raises(UndefinedMetricError):
            spearman([1, 1, 1], [1, 2, 3])

    def test_too_short(self):
        with pytest.raises(ArgumentError):
            spearman([1, 2], [2, 1])
