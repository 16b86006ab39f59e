"""Classification and regression metrics with reportable aggregation.

AUROC uses the pair-counting (Mann-Whitney) formulation with ties worth
1/2; balanced accuracy is the unweighted mean of per-class recalls over the
classes present in the labels. All rates live in [0, 1]; the CLI multiplies
by 100 for its text summary only.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyClass, SingleClass, ZeroDenominator


def accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    return int(np.sum(preds == labels)) / labels.size


def per_class_recalls(preds: np.ndarray, labels: np.ndarray,
                      classes=None) -> dict:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if labels.size == 0:
        raise EmptyClass("no samples to score")
    present = sorted(set(labels.tolist()))
    if classes is not None:
        missing = [c for c in classes if c not in present]
        if missing:
            raise EmptyClass(f"classes without any true sample: {missing}")
        present = sorted(classes)
    return {c: int(np.sum((labels == c) & (preds == c))) / int(np.sum(labels == c))
            for c in present}


def balanced_accuracy(preds: np.ndarray, labels: np.ndarray, classes=None) -> float:
    recalls = per_class_recalls(preds, labels, classes)
    return sum(recalls.values()) / len(recalls)


def precision_recall_f1(preds: np.ndarray, labels: np.ndarray,
                        positive=1) -> tuple[float, float, float]:
    """Precision/recall/F1 of the positive class (binary convention)."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    tp = int(np.sum((preds == positive) & (labels == positive)))
    fp = int(np.sum((preds == positive) & (labels != positive)))
    fn = int(np.sum((preds != positive) & (labels == positive)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability a random positive outscores a random negative; ties count 1/2."""
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise SingleClass("AUROC needs both classes present")
    diff = pos[:, None] - neg[None, :]
    wins = int(np.sum(diff > 0))
    ties = int(np.sum(diff == 0))
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def l1_error(preds: np.ndarray, truths: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(preds, dtype=np.float64)
                                - np.asarray(truths, dtype=np.float64))))


def l2_error(preds: np.ndarray, truths: np.ndarray) -> float:
    d = np.asarray(preds, dtype=np.float64) - np.asarray(truths, dtype=np.float64)
    return float(np.mean(d * d))


def nmse(preds: np.ndarray, truths: np.ndarray) -> float:
    truths = np.asarray(truths, dtype=np.float64)
    denom = float(np.mean(truths * truths))
    if denom == 0.0:
        raise ZeroDenominator("NMSE undefined for all-zero ground truth")
    return l2_error(preds, truths) / denom


@dataclass
class MetricsReport:
    task: str
    kind: str  # "classification" | "regression"
    metrics: dict
    class_counts: dict = field(default_factory=dict)
    config_fingerprint: str = ""

    def to_dict(self) -> dict:
        return {"task": self.task, "kind": self.kind, "metrics": self.metrics,
                "class_counts": self.class_counts,
                "config_fingerprint": self.config_fingerprint}

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    def save_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            for key in sorted(self.metrics):
                writer.writerow([key, repr(self.metrics[key])])

    def text_summary(self) -> str:
        """Human-readable lines; rates scaled by 100."""
        rate_keys = {"accuracy", "balanced_accuracy", "auroc", "precision", "recall", "f1"}
        lines = [f"task: {self.task} ({self.kind})"]
        for key in sorted(self.metrics):
            value = self.metrics[key]
            if key in rate_keys:
                lines.append(f"  {key}: {100.0 * value:.2f}")
            else:
                lines.append(f"  {key}: {value:.6g}")
        return "\n".join(lines)


def classification_report(predicted: np.ndarray, labels: np.ndarray,
                          scores=None, classes=None, task: str = "",
                          fingerprint: str = "") -> MetricsReport:
    """Scores, when given, are positive-class probabilities (binary only)."""
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    present = sorted(set(labels.tolist())) if classes is None else sorted(classes)
    metrics = {
        "accuracy": accuracy(predicted, labels),
        "balanced_accuracy": balanced_accuracy(predicted, labels, classes),
    }
    if len(present) == 2:
        positive = present[1]
        p, r, f1 = precision_recall_f1(predicted, labels, positive=positive)
        metrics.update(precision=p, recall=r, f1=f1)
        if scores is not None:
            metrics["auroc"] = auroc(np.asarray(scores), (labels == positive).astype(int))
    counts = {str(c): int(np.sum(labels == c)) for c in present}
    return MetricsReport(task=task, kind="classification", metrics=metrics,
                         class_counts=counts, config_fingerprint=fingerprint)


def regression_report(preds: np.ndarray, truths: np.ndarray, task: str = "",
                      fingerprint: str = "") -> MetricsReport:
    value = nmse(preds, truths)
    metrics = {
        "l1": l1_error(preds, truths),
        "l2": l2_error(preds, truths),
        "nmse": value,
        "nmse_x10": 10.0 * value,
    }
    return MetricsReport(task=task, kind="regression", metrics=metrics,
                         config_fingerprint=fingerprint)
