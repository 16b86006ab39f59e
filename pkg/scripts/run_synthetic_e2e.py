#!/usr/bin/env python3
"""End-to-end synthetic experiment: two-step pretraining, fine-tuning, and
scan-level evaluation over several seeds.

Mirrors the acceptance configuration by default (16^3 voxels, T=40, two
classes, noise std 0.5, 200/40/40 subject split, w=8, s=4) but every knob is
a flag, so smaller smoke runs are one command away:

    python scripts/run_synthetic_e2e.py --scans-per-class 20 --seeds 0 --max-epochs 3
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from voxformer.inference import predict_split
from voxformer.metrics import balanced_accuracy, classification_report
from voxformer.model import Model, save_checkpoint, toy_config
from voxformer.preprocess import WindowPlan
from voxformer.synthetic import SyntheticSpec, generate_synthetic_dataset
from voxformer.train import (
    TrainConfig,
    finetune,
    prepare_dataset,
    pretrain_stage1,
    pretrain_stage2,
)
from voxformer.volume_io import split_dataset


def run_seed(seed, manifest, scan_map, args, pretrain=True):
    arch = toy_config(window=args.window, dropout_p=args.dropout)
    model = Model(arch, seed=seed)
    base = TrainConfig(phase="stage1", learning_rate=args.lr_pretrain,
                       batch_size=args.batch_stage1, max_epochs=args.stage1_epochs,
                       patience=args.patience, window=args.window,
                       stride=args.stride, seed=seed)
    plan = WindowPlan(args.window, args.stride)
    data2 = prepare_dataset(manifest, plan, scans=scan_map)
    if pretrain:
        data1 = prepare_dataset(manifest, WindowPlan(1, 1), scans=scan_map,
                                splits=("train", "validation"))
        t0 = time.time()
        log1 = pretrain_stage1(data1, base, model)
        print(f"  stage1 {time.time() - t0:.0f}s best val {log1.best_metric:.4f}")
        cfg2 = base.for_phase("stage2", batch_size=args.batch_stage2,
                              max_epochs=args.stage2_epochs)
        t0 = time.time()
        log2 = pretrain_stage2(data2, cfg2, model)
        print(f"  stage2 {time.time() - t0:.0f}s best val {log2.best_metric:.4f}")
    cfg3 = base.for_phase("finetune", batch_size=args.batch_finetune,
                          max_epochs=args.max_epochs, learning_rate=args.lr_finetune)
    t0 = time.time()
    log3 = finetune(data2, cfg3, model, args.task)
    print(f"  finetune {time.time() - t0:.0f}s best val {log3.best_metric:.4f} "
          f"(epoch {log3.best_epoch})")

    preds = predict_split(model, data2["test"].scans, plan)
    by_id = {s.subject_id: s.labels[args.task] for s in data2["test"].scans}
    classes = sorted({v for v in by_id.values()})
    y_true = np.array([classes.index(by_id[p.subject_id]) for p in preds])
    y_pred = np.array([p.predicted_class for p in preds])
    bac = balanced_accuracy(y_pred, y_true)
    return model, bac


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scans-per-class", type=int, default=140)
    ap.add_argument("--data-seed", type=int, default=11)
    ap.add_argument("--split-seed", type=int, default=1)
    ap.add_argument("--fractions", default=None,
                    help="train,val,test fractions (default 200/40/40 equivalent)")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--window", type=int, default=8)
    ap.add_argument("--stride", type=int, default=4)
    ap.add_argument("--dropout", type=float, default=0.0)
    ap.add_argument("--task", default="category")
    ap.add_argument("--lr-pretrain", type=float, default=1e-3)
    ap.add_argument("--lr-finetune", type=float, default=3e-3)
    ap.add_argument("--batch-stage1", type=int, default=16)
    ap.add_argument("--batch-stage2", type=int, default=2)
    ap.add_argument("--batch-finetune", type=int, default=4)
    ap.add_argument("--stage1-epochs", type=int, default=1)
    ap.add_argument("--stage2-epochs", type=int, default=1)
    ap.add_argument("--max-epochs", type=int, default=8)
    ap.add_argument("--patience", type=int, default=10)
    ap.add_argument("--no-pretrain", action="store_true",
                    help="from-scratch baseline (no reconstruction pretraining)")
    ap.add_argument("--out", default=None, help="directory for checkpoints/results")
    args = ap.parse_args()

    spec = SyntheticSpec(counts_per_class=(args.scans_per_class,) * 2,
                         seed=args.data_seed)
    scans, manifest, _ = generate_synthetic_dataset(spec)
    n = len(scans)
    if args.fractions:
        fractions = tuple(float(x) for x in args.fractions.split(","))
    else:
        fractions = (200 / 280, 40 / 280, 40 / 280)
    manifest = split_dataset(manifest, fractions, seed=args.split_seed)
    sizes = {s: len(manifest.subset(s)) for s in ("train", "validation", "test")}
    print(f"dataset: {n} scans, splits {sizes}")
    scan_map = {s.subject_id: s for s in scans}

    bacs = []
    for seed in args.seeds:
        print(f"seed {seed}:")
        model, bac = run_seed(seed, manifest, scan_map, args,
                              pretrain=not args.no_pretrain)
        print(f"  test BAC {bac:.4f}")
        bacs.append(bac)
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            save_checkpoint(model, out / f"model_seed{seed}.ckpt")
    median = float(np.median(bacs))
    print(f"median test BAC over seeds {args.seeds}: {median:.4f}")
    if args.out:
        (Path(args.out) / "results.json").write_text(json.dumps(
            {"bacs": bacs, "median": median, "seeds": args.seeds}, indent=2))


if __name__ == "__main__":
    main()
