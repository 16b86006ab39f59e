"""Two-step pretraining, supervised fine-tuning, and early stopping.

Stage 1 trains encoder and decoder on single frames (all frames of the
training scans form one epoch). Stage 2 inserts the transformer and trains
encoder, transformer, and decoder end-to-end on windows, reconstructing
every window position (the CLS output position has no frame and is
excluded). Fine-tuning drops the decoder and optimizes the task head on
the CLS embedding; validation is scored per scan with window averaging.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import numerics as nx
from ..errors import ConfigMismatch, MissingLabels
from ..metrics import balanced_accuracy, l1_error
from ..numerics import AdamW, Tensor
from ..preprocess import WindowPlan
from .config import TrainConfig
from .data import PreparedSplit, stack_windows
from .losses import cce_loss, mse_loss, pretrain_total

LOSS_COLUMNS = ("l1", "intensity", "perceptual", "task", "total")


@dataclass
class TrainLog:
    phase: str
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = math.nan

    def log_step(self, step: int, epoch: int, terms: dict) -> None:
        rec = {"step": step, "epoch": epoch, "timestamp": time.time()}
        rec.update(terms)
        self.steps.append(rec)

    def log_epoch(self, epoch: int, metric: float) -> None:
        self.epochs.append({"epoch": epoch, "val_metric": metric,
                            "timestamp": time.time()})

    def save_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "epoch"] + list(LOSS_COLUMNS) + ["timestamp"])
            for rec in self.steps:
                writer.writerow([rec["step"], rec["epoch"]]
                                + [repr(rec[c]) if c in rec else "" for c in LOSS_COLUMNS]
                                + [repr(rec["timestamp"])])

    def summary(self) -> dict:
        return {
            "phase": self.phase,
            "n_steps": len(self.steps),
            "n_epochs": len(self.epochs),
            "best_epoch": self.best_epoch,
            "best_metric": self.best_metric,
            "val_metrics": [e["val_metric"] for e in self.epochs],
        }

    def save_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def early_stop(history: Sequence[float], patience: int, mode: str = "min"
               ) -> tuple[bool, int]:
    """(stop now?, index of the best epoch); ties keep the earliest epoch."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if not history:
        return False, -1
    values = np.asarray(history, dtype=np.float64)
    if mode == "max":
        values = -values
    best = int(np.argmin(values))
    return len(history) - 1 - best >= patience, best


def _snapshot(model) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.trainable_parameters().items()}


def _restore(model, state: dict[str, np.ndarray]) -> None:
    for name, arr in state.items():
        model.params[name].data = arr.copy()


def _optimizer(model, config: TrainConfig, prefixes: tuple[str, ...]) -> AdamW:
    subset = {n: p for n, p in model.trainable_parameters().items()
              if n.startswith(prefixes)}
    return AdamW(subset, lr=config.learning_rate, weight_decay=config.weight_decay)


def _run_training(model, config: TrainConfig, split: PreparedSplit, opt: AdamW,
                  batch_fn, val_fn, mode: str) -> TrainLog:
    log = TrainLog(phase=config.phase)
    pairs = split.window_index()
    if not pairs:
        raise ConfigMismatch("training split contains no samples")
    shuffle_rng = model.rng.spawn(f"shuffle/{config.phase}/{config.seed}")
    history: list[float] = []
    best_state = None
    best = -1
    step = 0
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(pairs))
        for lo in range(0, len(order), config.batch_size):
            batch = [pairs[k] for k in order[lo:lo + config.batch_size]]
            step += 1
            with nx.tape():
                loss, terms = batch_fn(batch, step)
            nx.backward(loss)
            opt.step()
            opt.zero_grad()
            log.log_step(step, epoch, terms)
        history.append(val_fn())
        log.log_epoch(epoch, history[-1])
        stop, best = early_stop(history, config.patience, mode)
        if best == len(history) - 1:
            best_state = _snapshot(model)
        if stop:
            break
    if best_state is not None:
        _restore(model, best_state)
        log.best_epoch = best + 1
        log.best_metric = history[best]
    return log


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------

def _pretrain_val_loss(model, config: TrainConfig, split: PreparedSplit,
                       stage: int) -> float:
    pairs = split.window_index()
    if not pairs:
        raise ConfigMismatch("validation split contains no samples")
    total = 0.0
    count = 0
    for lo in range(0, len(pairs), config.batch_size):
        batch = pairs[lo:lo + config.batch_size]
        _, terms = _pretrain_batch(model, config, split, batch, stage=stage,
                                   train=False, step=0)
        total += terms["total"] * len(batch)
        count += len(batch)
    return total / count


def _pretrain_batch(model, config: TrainConfig, split: PreparedSplit,
                    batch: list, stage: int, train: bool, step: int):
    inputs, targets, masks = stack_windows(split, batch)
    rng = model.rng.spawn(f"dropout/{config.phase}/{step}") if train else None
    if stage == 1:
        x = Tensor(inputs[:, 0])
        recon = model.stage1_forward(x, train=train, rng=rng)
        target = targets[:, 0]
        mask = masks[:, 0][:, None]
    else:
        b, w = inputs.shape[:2]
        recon = model.stage2_forward(Tensor(inputs), train=train, rng=rng)
        recon = nx.reshape(recon, (b * w,) + recon.shape[2:])
        target = targets.reshape((b * w,) + targets.shape[2:])
        mask = masks.reshape((b * w,) + masks.shape[2:])[:, None]
    return pretrain_total(recon, Tensor(target), mask, model,
                          use_l1=config.use_l1, use_intensity=config.use_intensity,
                          use_perceptual=config.use_perceptual)


def pretrain_stage1(data: dict[str, PreparedSplit], config: TrainConfig,
                    model) -> TrainLog:
    """Per-frame reconstruction; expects windows of length 1 (every frame)."""
    if config.phase != "stage1":
        raise ConfigMismatch(f"config phase is {config.phase!r}, expected 'stage1'")
    model.phase = "stage1"
    opt = _optimizer(model, config, ("encoder.", "decoder."))
    batch_fn = lambda batch, step: _pretrain_batch(  # noqa: E731
        model, config, data["train"], batch, stage=1, train=True, step=step)
    val_fn = lambda: _pretrain_val_loss(model, config, data["validation"], stage=1)  # noqa: E731
    return _run_training(model, config, data["train"], opt, batch_fn, val_fn, "min")


def pretrain_stage2(data: dict[str, PreparedSplit], config: TrainConfig,
                    model) -> TrainLog:
    """Windowed reconstruction through the transformer, warm or from scratch."""
    if config.phase != "stage2":
        raise ConfigMismatch(f"config phase is {config.phase!r}, expected 'stage2'")
    model.phase = "stage2"
    opt = _optimizer(model, config, ("encoder.", "transformer.", "decoder."))
    batch_fn = lambda batch, step: _pretrain_batch(  # noqa: E731
        model, config, data["train"], batch, stage=2, train=True, step=step)
    val_fn = lambda: _pretrain_val_loss(model, config, data["validation"], stage=2)  # noqa: E731
    return _run_training(model, config, data["train"], opt, batch_fn, val_fn, "min")


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------

def task_classes(data: dict[str, PreparedSplit], task: str) -> list:
    values = set()
    for split in data.values():
        for scan in split.scans:
            if task not in scan.labels:
                raise MissingLabels(f"scan {scan.subject_id} has no {task!r} label")
            values.add(scan.labels[task])
    return sorted(values)


def _finetune_val_metric(model, config: TrainConfig, split: PreparedSplit,
                         task: str, classes: Optional[list]) -> float:
    from ..inference import predict_split  # local import, no cycle at module load
    plan = WindowPlan(window=config.window, stride=config.stride)
    preds = predict_split(model, split.scans, plan)
    by_id = {s.subject_id: s.labels[task] for s in split.scans}
    if classes is not None:
        idx = {c: i for i, c in enumerate(classes)}
        y_true = np.array([idx[by_id[p.subject_id]] for p in preds])
        y_pred = np.array([p.predicted_class for p in preds])
        return balanced_accuracy(y_pred, y_true)
    y_true = np.array([float(by_id[p.subject_id]) for p in preds])
    y_pred = np.array([p.predicted_value for p in preds])
    return l1_error(y_pred, y_true)


def finetune(data: dict[str, PreparedSplit], config: TrainConfig, model,
             task: str) -> TrainLog:
    """Supervised training of encoder + transformer + head; decoder dropped."""
    if config.phase != "finetune":
        raise ConfigMismatch(f"config phase is {config.phase!r}, expected 'finetune'")
    classes = task_classes(data, task)
    classification = all(isinstance(c, str) for c in classes)
    if classification:
        model.ensure_head("classification", num_classes=len(classes))
        class_index = {c: i for i, c in enumerate(classes)}
    else:
        model.ensure_head("regression")
        class_index = None
    model.phase = "finetune"
    opt = _optimizer(model, config, ("encoder.", "transformer.", "head."))
    train_split = data["train"]

    def batch_fn(batch, step):
        inputs, _, _ = stack_windows(train_split, batch)
        rng = model.rng.spawn(f"dropout/finetune/{step}")
        logits = model.classify_windows(Tensor(inputs), train=True, rng=rng)
        labels = [train_split.scans[i].labels[task] for i, _ in batch]
        if classification:
            y = np.array([class_index[v] for v in labels])
            loss = cce_loss(logits, y)
        else:
            y = np.array([float(v) for v in labels])
            loss = mse_loss(logits, y)
        return loss, {"task": float(loss.data), "total": float(loss.data)}

    val_fn = lambda: _finetune_val_metric(  # noqa: E731
        model, config, data["validation"], task,
        classes if classification else None)
    mode = "max" if classification else "min"
    return _run_training(model, config, train_split, opt, batch_fn, val_fn, mode)
