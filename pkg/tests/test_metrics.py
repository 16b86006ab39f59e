"""Metric implementations against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxformer.errors import EmptyClass, SingleClass, ZeroDenominator
from voxformer.metrics import (
    accuracy,
    auroc,
    balanced_accuracy,
    classification_report,
    l1_error,
    l2_error,
    nmse,
    precision_recall_f1,
    regression_report,
)


def confusion_oracle(preds, labels, classes):
    cm = {c: {k: 0 for k in classes} for c in classes}
    for p, t in zip(preds, labels):
        cm[t][p] += 1
    return cm


def bac_oracle(preds, labels):
    classes = sorted(set(labels))
    cm = confusion_oracle(preds, labels, classes)
    recalls = [cm[c][c] / sum(cm[c].values()) for c in classes]
    return sum(recalls) / len(recalls)


def auroc_oracle(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def prf_oracle(preds, labels, positive):
    tp = sum(1 for p, t in zip(preds, labels) if p == positive and t == positive)
    fp = sum(1 for p, t in zip(preds, labels) if p == positive and t != positive)
    fn = sum(1 for p, t in zip(preds, labels) if p != positive and t == positive)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


class TestBalancedAccuracy:
    def test_perfect(self):
        y = np.array([0, 1, 1, 0, 2])
        assert balanced_accuracy(y, y) == 1.0

    def test_binary_one_sided(self):
        labels = np.array([0, 0, 1, 1])
        preds = np.array([0, 0, 0, 0])
        assert balanced_accuracy(preds, labels) == 0.5

    def test_three_class_known_recalls(self):
        # recalls 1, 0.5, 0.25 -> mean 7/12
        labels = np.array([0] * 4 + [1] * 4 + [2] * 4)
        preds = np.array([0] * 4 + [1, 1, 0, 0] + [2, 0, 0, 0])
        got = balanced_accuracy(preds, labels)
        assert got == pytest.approx(bac_oracle(list(preds), list(labels)))
        assert got == pytest.approx((1 + 0.5 + 0.25) / 3)

    def test_missing_expected_class_raises(self):
        with pytest.raises(EmptyClass):
            balanced_accuracy(np.array([0, 0]), np.array([0, 0]), classes=[0, 1])


class TestAuroc:
    def test_perfectly_separated(self):
        assert auroc(np.array([0.9, 0.8, 0.2, 0.1]), np.array([1, 1, 0, 0])) == 1.0

    def test_all_ties(self):
        assert auroc(np.full(6, 0.5), np.array([1, 0, 1, 0, 1, 0])) == 0.5

    def test_six_sample_case_exact(self):
        scores = np.array([0.1, 0.4, 0.35, 0.8, 0.35, 0.6])
        labels = np.array([0, 0, 1, 1, 0, 1])
        assert auroc(scores, labels) == auroc_oracle(scores.tolist(), labels.tolist())

    def test_single_class_raises(self):
        with pytest.raises(SingleClass):
            auroc(np.array([0.5, 0.7]), np.array([1, 1]))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6))
    def test_monotone_invariance(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 30))
        labels = np.zeros(n, int)
        labels[rng.choice(n, size=max(1, n // 3), replace=False)] = 1
        if labels.all() or not labels.any():
            labels[0] = 1 - labels[0]
        scores = rng.standard_normal(n)
        assert auroc(scores, labels) == pytest.approx(
            auroc(np.exp(scores), labels), abs=1e-12)


class TestRegressionMetrics:
    def test_nmse_fixed_points(self):
        truth = np.array([2.0, 4.0])
        assert nmse(truth, truth) == 0.0
        assert nmse(np.zeros(2), truth) == 1.0

    def test_nmse_worked_example(self):
        # MSE((3,5),(2,4)) = 1, MSE((2,4),0) = 10 -> 0.1
        assert nmse(np.array([3.0, 5.0]), np.array([2.0, 4.0])) == pytest.approx(0.1)

    def test_zero_truth_raises(self):
        with pytest.raises(ZeroDenominator):
            nmse(np.ones(3), np.zeros(3))

    def test_nmse_permutation_invariance(self):
        rng = np.random.default_rng(0)
        p, t = rng.standard_normal(20), rng.standard_normal(20)
        perm = rng.permutation(20)
        assert nmse(p, t) == pytest.approx(nmse(p[perm], t[perm]), abs=1e-12)


class TestRandomizedOracleEquivalence:
    """200+ randomized small cases, exact equality with brute-force oracles."""

    def test_classification_metrics(self):
        rng = np.random.default_rng(42)
        for case in range(200):
            n = int(rng.integers(4, 40))
            n_classes = int(rng.integers(2, 5))
            labels = rng.integers(0, n_classes, size=n)
            while len(set(labels.tolist())) < n_classes:
                labels = rng.integers(0, n_classes, size=n)
            preds = rng.integers(0, n_classes, size=n)
            assert accuracy(preds, labels) == sum(
                1 for p, t in zip(preds, labels) if p == t) / n
            assert balanced_accuracy(preds, labels) == pytest.approx(
                bac_oracle(preds.tolist(), labels.tolist()), abs=0)
            if n_classes == 2:
                got = precision_recall_f1(preds, labels, positive=1)
                assert got == prf_oracle(preds.tolist(), labels.tolist(), 1)
                scores = np.round(rng.random(n), 2)
                assert auroc(scores, labels) == auroc_oracle(
                    scores.tolist(), labels.tolist())

    def test_regression_metrics(self):
        rng = np.random.default_rng(43)
        for case in range(200):
            n = int(rng.integers(2, 30))
            t = rng.standard_normal(n)
            p = t + rng.standard_normal(n) * 0.5
            assert l1_error(p, t) == float(np.mean(np.abs(p - t)))
            assert l2_error(p, t) == float(np.mean((p - t) ** 2))
            assert nmse(p, t) == l2_error(p, t) / float(np.mean(t * t))

    def test_bac_equals_accuracy_on_balanced(self):
        rng = np.random.default_rng(44)
        for case in range(50):
            n_per = int(rng.integers(2, 15))
            labels = np.array([0] * n_per + [1] * n_per)
            preds = rng.integers(0, 2, size=2 * n_per)
            assert balanced_accuracy(preds, labels) == pytest.approx(
                accuracy(preds, labels), abs=1e-12)


class TestReports:
    def test_classification_report_fields(self):
        labels = np.array([0, 0, 1, 1])
        preds = np.array([0, 1, 1, 1])
        scores = np.array([0.2, 0.6, 0.7, 0.9])
        rep = classification_report(preds, labels, scores=scores, classes=[0, 1],
                                    task="category", fingerprint="abc")
        assert set(rep.metrics) == {"accuracy", "balanced_accuracy", "precision",
                                    "recall", "f1", "auroc"}
        assert all(0.0 <= v <= 1.0 for v in rep.metrics.values())
        assert rep.class_counts == {"0": 2, "1": 2}
        assert rep.config_fingerprint == "abc"

    def test_regression_report_has_x10(self):
        rep = regression_report(np.array([3.0, 5.0]), np.array([2.0, 4.0]), task="amplitude")
        assert rep.metrics["nmse_x10"] == pytest.approx(10 * rep.metrics["nmse"])

    def test_text_summary_scales_rates(self):
        rep = classification_report(np.array([0, 1]), np.array([0, 1]), task="t")
        text = rep.text_summary()
        assert "100.00" in text

    def test_json_round_trip(self, tmp_path):
        import json
        rep = regression_report(np.array([1.0]), np.array([2.0]), task="a")
        rep.save_json(tmp_path / "m.json")
        back = json.loads((tmp_path / "m.json").read_text())
        assert back["metrics"]["l1"] == rep.metrics["l1"]
