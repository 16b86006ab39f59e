"""Command-line surface: exit codes, file outputs, and the eval flow."""

import csv
import json

import numpy as np
import pytest

from voxformer.cli import main
from voxformer.metrics import classification_report


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    """A small generated dataset with splits, reused across CLI tests."""
    out = tmp_path_factory.mktemp("cli_data")
    spec = {"counts_per_class": [4, 4], "extents": [16, 16, 16], "n_frames": 12,
            "seed": 3}
    (out / "spec.json").write_text(json.dumps(spec))
    assert main(["gen-data", "--spec", str(out / "spec.json"),
                 "--out", str(out / "scans")]) == 0
    # seed chosen so both classes land in every split
    assert main(["split", "--manifest", str(out / "scans" / "manifest.jsonl"),
                 "--fractions", "0.5,0.25,0.25", "--seed", "2"]) == 0
    return out


def test_unknown_subcommand_exit_1(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_missing_required_flag_exit_1(capsys):
    assert main(["gen-data"]) == 1


def test_gen_data_outputs(data_dir):
    manifest = data_dir / "scans" / "manifest.jsonl"
    lines = manifest.read_text().strip().splitlines()
    assert len(lines) == 8
    first = json.loads(lines[0])
    assert set(first) == {"path", "subject_id", "labels", "split"}
    assert (data_dir / "scans" / "ground_truth.jsonl").exists()


def test_split_sizes(data_dir):
    manifest = data_dir / "scans" / "manifest.jsonl"
    tags = [json.loads(line)["split"] for line in manifest.read_text().splitlines()]
    assert tags.count("train") == 4 and tags.count("validation") == 2 \
        and tags.count("test") == 2


def test_gen_data_bad_spec_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"counts_per_class": [2, 2], "noise_std": -5}))
    assert main(["gen-data", "--spec", str(bad), "--out", str(tmp_path / "x")]) == 2


def test_eval_on_known_predictions(tmp_path, data_dir):
    """eval --predictions must reproduce the metric oracles exactly."""
    manifest = data_dir / "scans" / "manifest.jsonl"
    entries = [json.loads(line) for line in manifest.read_text().splitlines()]
    rows = []
    rng = np.random.default_rng(0)
    for e in entries:
        true_idx = int(e["labels"]["category"][1])
        pred = true_idx if rng.random() < 0.75 else 1 - true_idx
        logits = [3.0 - 2 * pred, 1.0 + 2 * pred]
        rows.append({"subject_id": e["subject_id"], "window_count": 3,
                     "label": e["labels"]["category"], "out_0": logits[0],
                     "out_1": logits[1], "predicted_class": pred})
    pred_csv = tmp_path / "preds.csv"
    with open(pred_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)

    out = tmp_path / "eval"
    assert main(["eval", "--manifest", str(manifest), "--task", "category",
                 "--predictions", str(pred_csv), "--out", str(out)]) == 0
    got = json.loads((out / "metrics.json").read_text())["metrics"]

    y_true = np.array([int(r["label"][1]) for r in rows])
    y_pred = np.array([r["predicted_class"] for r in rows])
    outs = np.array([[r["out_0"], r["out_1"]] for r in rows], dtype=float)
    e = np.exp(outs - outs.max(axis=1, keepdims=True))
    scores = (e / e.sum(axis=1, keepdims=True))[:, 1]
    want = classification_report(y_pred, y_true, scores=scores, classes=[0, 1]).metrics
    for key, value in want.items():
        assert got[key] == pytest.approx(value, abs=1e-12), key
    assert (out / "metrics.csv").exists()


def test_eval_needs_source(tmp_path, data_dir):
    manifest = data_dir / "scans" / "manifest.jsonl"
    assert main(["eval", "--manifest", str(manifest), "--task", "category",
                 "--out", str(tmp_path / "o")]) == 1


def test_eval_reports_byte_identical(tmp_path, data_dir):
    manifest = data_dir / "scans" / "manifest.jsonl"
    entries = [json.loads(line) for line in manifest.read_text().splitlines()]
    rows = []
    for i, e in enumerate(entries):
        pred = i % 2
        rows.append({"subject_id": e["subject_id"], "window_count": 1,
                     "label": e["labels"]["category"], "out_0": 1.0 - pred,
                     "out_1": float(pred), "predicted_class": pred})
    pred_csv = tmp_path / "p.csv"
    with open(pred_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["eval", "--manifest", str(manifest), "--task", "category",
                     "--predictions", str(pred_csv), "--out", str(out)]) == 0
        outs.append((out / "metrics.json").read_bytes())
    assert outs[0] == outs[1]


def test_gradcheck_quick():
    assert main(["gradcheck", "--seeds", "1"]) == 0


@pytest.mark.slow
def test_train_infer_eval_pipeline(tmp_path, data_dir):
    manifest = data_dir / "scans" / "manifest.jsonl"
    cfg = {"phase": "stage1", "learning_rate": 1e-3, "batch_size": 8,
           "max_epochs": 1, "patience": 3, "window": 4, "stride": 4, "seed": 0}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))

    s1 = tmp_path / "s1"
    assert main(["pretrain", "--stage", "1", "--manifest", str(manifest),
                 "--config", str(cfg_path), "--out", str(s1)]) == 0
    assert (s1 / "model.ckpt").exists() and (s1 / "train_log.csv").exists()

    s2 = tmp_path / "s2"
    assert main(["pretrain", "--stage", "2", "--manifest", str(manifest),
                 "--config", str(cfg_path), "--out", str(s2),
                 "--checkpoint", str(s1 / "model.ckpt")]) == 0

    ft = tmp_path / "ft"
    assert main(["finetune", "--task", "category", "--manifest", str(manifest),
                 "--config", str(cfg_path), "--out", str(ft),
                 "--checkpoint", str(s2 / "model.ckpt")]) == 0

    inf = tmp_path / "inf"
    assert main(["infer", "--checkpoint", str(ft / "model.ckpt"),
                 "--manifest", str(manifest), "--task", "category",
                 "--out", str(inf), "--split", "test",
                 "--window", "4", "--stride", "4"]) == 0
    rows = list(csv.DictReader(open(inf / "predictions.csv")))
    assert len(rows) == 2 and "out_0" in rows[0]

    ev = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(ft / "model.ckpt"),
                 "--manifest", str(manifest), "--task", "category",
                 "--out", str(ev), "--split", "test",
                 "--window", "4", "--stride", "4"]) == 0
    report = json.loads((ev / "metrics.json").read_text())
    assert report["kind"] == "classification"
    assert report["config_fingerprint"]
