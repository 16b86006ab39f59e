"""Command-line surface tying the pipeline together.

Subcommands: gen-data, split, pretrain, finetune, infer, eval, gradcheck,
ablate. Exit codes: 0 success, 1 usage error, 2 runtime error. All
randomness is governed by explicit seeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from .errors import VoxformerError
from .metrics import classification_report, regression_report
from .model import Model, load_checkpoint, save_checkpoint, toy_config
from .model.config import ArchConfig
from .preprocess import WindowPlan
from .synthetic import SyntheticSpec, generate_synthetic_dataset
from .train import (
    TrainConfig,
    finetune,
    prepare_dataset,
    pretrain_stage1,
    pretrain_stage2,
)
from .volume_io import DatasetManifest, split_dataset


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="voxformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="JSON file with generator settings")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")

    p = sub.add_parser("split", help="assign train/validation/test tags")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fractions", default="0.7,0.1,0.2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output manifest (default: in place)")

    for name in ("pretrain", "finetune"):
        p = sub.add_parser(name)
        p.add_argument("--manifest", required=True)
        p.add_argument("--config", required=True, help="TrainConfig JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--checkpoint", default=None,
                       help="warm-start checkpoint (stage 2 / finetune)")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--arch-config", default=None, help="ArchConfig JSON file")
        p.add_argument("--surrogate-weights", default=None,
                       help="npz with external perceptual-stack weights")
        if name == "pretrain":
            p.add_argument("--stage", type=int, choices=(1, 2), required=True)
        else:
            p.add_argument("--task", required=True)

    p = sub.add_parser("infer", help="per-scan window-averaged predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--task", required=True)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--avg", choices=("logits", "probs"), default="logits")

    p = sub.add_parser("eval", help="score predictions against labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--predictions", default=None,
                   help="predictions CSV (from infer); otherwise run inference")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--avg", choices=("logits", "probs"), default="logits")
    p.add_argument("--fingerprint", default="")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=3, help="number of random repetitions")

    p = sub.add_parser("ablate", help="run one ablation variant end to end")
    p.add_argument("--variant", choices=("i", "ii", "iii", "iv", "v"), required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", default="category")
    p.add_argument("--seed", type=int, default=None)
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _load_arch(path, manifest: DatasetManifest, window: int) -> ArchConfig:
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            return ArchConfig.from_dict(json.load(fh))
    from .volume_io import read_scan
    first = read_scan(manifest.entries[0].path)
    return toy_config(extents=first.extents, window=window)


def _train_common(args, phase: str):
    config = TrainConfig.from_json(args.config)
    if args.seed is not None:
        config = config.for_phase(config.phase, seed=args.seed)
    if config.phase != phase:
        config = config.for_phase(phase)
    manifest = DatasetManifest.load(args.manifest)
    return config, manifest


def _write_outputs(out_dir: Path, model, log, config: TrainConfig, optimizer=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out_dir / "model.ckpt", optimizer)
    log.save_csv(out_dir / "train_log.csv")
    log.save_summary(out_dir / "train_summary.json")
    summary = {
        "config": config.to_dict(),
        "config_fingerprint": config.fingerprint(model.cfg.fingerprint()),
        "arch_fingerprint": model.cfg.fingerprint(),
        "param_count": model.parameter_count(),
        "phase": model.phase,
    }
    (out_dir / "run.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")


def _cmd_gen_data(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec = SyntheticSpec.from_dict(json.load(fh))
    if args.seed is not None:
        spec.seed = args.seed
    out = Path(args.out)
    scans, manifest, truths = generate_synthetic_dataset(spec, out_dir=out)
    manifest.save(out / "manifest.jsonl")
    with open(out / "ground_truth.jsonl", "w", encoding="utf-8") as fh:
        for t in truths:
            fh.write(json.dumps({
                "subject_id": t.subject_id, "class_index": t.class_index,
                "frequency": t.frequency, "amplitude": t.amplitude,
                "phase": t.phase, "blob_center": list(t.blob_center),
                "blob_radius": t.blob_radius}, sort_keys=True) + "\n")
    print(f"wrote {len(scans)} scans to {out}")
    return 0


def _cmd_split(args) -> int:
    fractions = tuple(float(x) for x in args.fractions.split(","))
    if len(fractions) != 3:
        raise UsageError("--fractions needs three comma-separated values")
    manifest = DatasetManifest.load(args.manifest)
    tagged = split_dataset(manifest, fractions, seed=args.seed)
    tagged.save(args.out or args.manifest)
    sizes = {name: len(tagged.subset(name)) for name in ("train", "validation", "test")}
    print(f"split sizes: {sizes}")
    return 0


def _cmd_pretrain(args) -> int:
    config, manifest = _train_common(args, "stage1" if args.stage == 1 else "stage2")
    if args.stage == 1:
        plan = WindowPlan(1, 1)
    else:
        plan = WindowPlan(config.window, config.stride)
    data = prepare_dataset(manifest, plan, input_mode=config.input_mode,
                           splits=("train", "validation"))
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
    else:
        arch = _load_arch(args.arch_config, manifest, config.window)
        model = Model(arch, seed=config.seed)
    if args.surrogate_weights:
        model.load_surrogate_weights(args.surrogate_weights)
    log = pretrain_stage1(data, config, model) if args.stage == 1 \
        else pretrain_stage2(data, config, model)
    _write_outputs(Path(args.out), model, log, config)
    print(f"stage {args.stage} done: best epoch {log.best_epoch}, "
          f"val loss {log.best_metric:.6g}")
    return 0


def _cmd_finetune(args) -> int:
    config, manifest = _train_common(args, "finetune")
    plan = WindowPlan(config.window, config.stride)
    data = prepare_dataset(manifest, plan, input_mode=config.input_mode,
                           splits=("train", "validation"))
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
    else:
        arch = _load_arch(args.arch_config, manifest, config.window)
        model = Model(arch, seed=config.seed)
    if args.surrogate_weights:
        model.load_surrogate_weights(args.surrogate_weights)
    log = finetune(data, config, model, args.task)
    _write_outputs(Path(args.out), model, log, config)
    print(f"finetune done: best epoch {log.best_epoch}, val metric {log.best_metric:.6g}")
    return 0


def _predictions_rows(model, manifest, split, task, plan, avg):
    from .inference import predict_split
    data = prepare_dataset(manifest, plan, splits=(split,))
    preds = predict_split(model, data[split].scans, plan, avg=avg)
    labels = {s.subject_id: s.labels.get(task) for s in data[split].scans}
    rows = []
    for p in preds:
        row = {"subject_id": p.subject_id, "window_count": p.window_count,
               "label": labels[p.subject_id]}
        for i, v in enumerate(p.aggregated):
            row[f"out_{i}"] = float(v)
        if p.predicted_class is not None:
            row["predicted_class"] = p.predicted_class
        else:
            row["predicted_value"] = p.predicted_value
        rows.append(row)
    return rows


def _write_predictions_csv(rows, path) -> None:
    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def _cmd_infer(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.load(args.manifest)
    plan = WindowPlan(args.window or model.cfg.window, args.stride or model.cfg.window // 2)
    rows = _predictions_rows(model, manifest, args.split, args.task, plan, args.avg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_predictions_csv(rows, out / "predictions.csv")
    print(f"wrote {len(rows)} predictions to {out / 'predictions.csv'}")
    return 0


def _rows_to_report(rows, manifest: DatasetManifest, task: str, fingerprint: str):
    schema = manifest.label_schema()
    if task not in schema:
        raise UsageError(f"task {task!r} not present in manifest labels")
    if schema[task]["kind"] == "categorical":
        classes = schema[task]["classes"]
        y_true = np.array([classes.index(r["label"]) for r in rows])
        y_pred = np.array([int(r["predicted_class"]) for r in rows])
        scores = None
        if len(classes) == 2:
            outs = np.array([[float(r[f"out_{i}"]) for i in range(len(classes))]
                             for r in rows])
            e = np.exp(outs - outs.max(axis=1, keepdims=True))
            scores = (e / e.sum(axis=1, keepdims=True))[:, 1]
        return classification_report(y_pred, y_true, scores=scores,
                                     classes=list(range(len(classes))),
                                     task=task, fingerprint=fingerprint)
    y_true = np.array([float(r["label"]) for r in rows])
    y_pred = np.array([float(r["predicted_value"]) for r in rows])
    return regression_report(y_pred, y_true, task=task, fingerprint=fingerprint)


def _cmd_eval(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    fingerprint = args.fingerprint
    if args.predictions:
        with open(args.predictions, "r", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    else:
        if not args.checkpoint:
            raise UsageError("eval needs --predictions or --checkpoint")
        model, _ = load_checkpoint(args.checkpoint)
        plan = WindowPlan(args.window or model.cfg.window,
                          args.stride or model.cfg.window // 2)
        rows = _predictions_rows(model, manifest, args.split, args.task, plan, args.avg)
        fingerprint = fingerprint or model.cfg.fingerprint()
    report = _rows_to_report(rows, manifest, args.task, fingerprint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save_json(out / "metrics.json")
    report.save_csv(out / "metrics.csv")
    if not args.predictions:
        _write_predictions_csv(rows, out / "predictions.csv")
    print(report.text_summary())
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradsuite import run_op_checks
    failures = run_op_checks(base_seed=args.seed, n_seeds=args.seeds, verbose=True)
    return 0 if failures == 0 else 2


ABLATION_VARIANTS = {
    "i": {"use_intensity": False},
    "ii": {"use_l1": False},
    "iii": {"use_perceptual": False},
    "iv": {"input_mode": "global_only"},
    "v": {"schedule": "one_step"},
}


def _cmd_ablate(args) -> int:
    base = TrainConfig.from_json(args.config)
    overrides = dict(ABLATION_VARIANTS[args.variant])
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = base.for_phase(base.phase, **overrides)
    manifest = DatasetManifest.load(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    arch = _load_arch(None, manifest, config.window)
    model = Model(arch, seed=config.seed)
    plan = WindowPlan(config.window, config.stride)
    data2 = prepare_dataset(manifest, plan, input_mode=config.input_mode)
    logs = {}
    if config.schedule == "two_step":
        data1 = prepare_dataset(manifest, WindowPlan(1, 1), input_mode=config.input_mode,
                                splits=("train", "validation"))
        logs["stage1"] = pretrain_stage1(data1, config.for_phase("stage1"), model)
    logs["stage2"] = pretrain_stage2(data2, config.for_phase("stage2"), model)
    logs["finetune"] = finetune(data2, config.for_phase("finetune"), model, args.task)
    save_checkpoint(model, out / "model.ckpt")

    rows = _predictions_rows(model, manifest, "test", args.task, plan, "logits")
    fingerprint = config.fingerprint(model.cfg.fingerprint())
    report = _rows_to_report(rows, manifest, args.task, fingerprint)
    report.save_json(out / "metrics.json")
    report.save_csv(out / "metrics.csv")
    _write_predictions_csv(rows, out / "predictions.csv")
    summary = {
        "variant": args.variant,
        "config": config.to_dict(),
        "config_fingerprint": fingerprint,
        "phases": {k: v.summary() for k, v in logs.items()},
        "metrics": report.metrics,
    }
    (out / "ablation.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    print(f"variant {args.variant}: fingerprint {fingerprint[:12]}... "
          f"metrics {report.metrics}")
    return 0


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "split": _cmd_split,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (VoxformerError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if "--traceback" in (argv or sys.argv):
            traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
