"""Scan-level inference: run the head on every length-w window and average.

The aggregate is the arithmetic mean of the per-window head outputs (raw
logits by default; ``avg="probs"`` averages softmax outputs instead), then
argmax for classification with ties broken to the lowest class index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import WindowTooLong
from .numerics import Tensor
from .preprocess import NormalizedScan, WindowPlan
from .train.data import PreparedScan


@dataclass
class ScanPrediction:
    subject_id: str
    window_outputs: np.ndarray  # (m, c) or (m, 1)
    aggregated: np.ndarray      # (c,) or (1,)
    predicted_class: Optional[int]
    predicted_value: Optional[float]
    window_count: int


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def window_inputs(norm: NormalizedScan, plan: WindowPlan) -> np.ndarray:
    t = norm.n_frames
    if t < plan.window:
        raise WindowTooLong(f"scan has {t} frames but the window needs {plan.window}")
    return np.stack([norm.combined[s:s + plan.window] for s in plan.starts(t)])


def predict_scan(model, norm: NormalizedScan, plan: WindowPlan,
                 avg: str = "logits", max_batch_frames: int = 128) -> ScanPrediction:
    windows = window_inputs(norm, plan)  # (m, w, 2, ...)
    m = windows.shape[0]
    per_batch = max(1, max_batch_frames // plan.window)
    outputs = []
    for i in range(0, m, per_batch):
        chunk = Tensor(windows[i:i + per_batch].astype(np.float32))
        outputs.append(model.classify_windows(chunk, train=False).data)
    raw = np.concatenate(outputs, axis=0)
    per_window = _softmax_rows(raw) if avg == "probs" and raw.shape[1] > 1 else raw
    aggregated = per_window.mean(axis=0)
    if model.cfg.task == "classification":
        predicted_class = int(np.argmax(aggregated))  # first max wins ties
        predicted_value = None
    else:
        predicted_class = None
        predicted_value = float(aggregated[0])
    return ScanPrediction(subject_id=norm.subject_id, window_outputs=raw,
                          aggregated=aggregated, predicted_class=predicted_class,
                          predicted_value=predicted_value, window_count=m)


def predict_split(model, scans: list[PreparedScan], plan: WindowPlan,
                  avg: str = "logits") -> list[ScanPrediction]:
    preds = [predict_scan(model, s.norm, plan, avg=avg) for s in scans]
    return sorted(preds, key=lambda p: p.subject_id)
