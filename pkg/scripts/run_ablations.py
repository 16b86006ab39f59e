#!/usr/bin/env python3
"""Run the five ablation variants end to end on a generated toy dataset and
summarize their metrics side by side.

    python scripts/run_ablations.py --out /tmp/ablations
"""

import argparse
import csv
import json
import tempfile
from pathlib import Path

from voxformer.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--scans-per-class", type=int, default=12)
    ap.add_argument("--n-frames", type=int, default=24)
    ap.add_argument("--window", type=int, default=8)
    ap.add_argument("--stride", type=int, default=4)
    ap.add_argument("--max-epochs", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--variants", nargs="+", default=["i", "ii", "iii", "iv", "v"])
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = out / "data"
    spec = {"counts_per_class": [args.scans_per_class] * 2,
            "n_frames": args.n_frames, "seed": args.seed}
    spec_path = out / "spec.json"
    spec_path.write_text(json.dumps(spec))
    assert cli_main(["gen-data", "--spec", str(spec_path), "--out", str(data_dir)]) == 0
    manifest = data_dir / "manifest.jsonl"
    assert cli_main(["split", "--manifest", str(manifest),
                     "--fractions", "0.6,0.2,0.2", "--seed", str(args.seed)]) == 0

    cfg = {"phase": "stage2", "learning_rate": 1e-3, "batch_size": 4,
           "max_epochs": args.max_epochs, "patience": 5,
           "window": args.window, "stride": args.stride, "seed": args.seed}
    cfg_path = out / "train_config.json"
    cfg_path.write_text(json.dumps(cfg))

    rows = []
    for variant in args.variants:
        vdir = out / f"variant_{variant}"
        code = cli_main(["ablate", "--variant", variant, "--manifest", str(manifest),
                         "--config", str(cfg_path), "--out", str(vdir)])
        assert code == 0, f"variant {variant} failed"
        summary = json.loads((vdir / "ablation.json").read_text())
        rows.append({"variant": variant,
                     "fingerprint": summary["config_fingerprint"][:16],
                     **{k: round(v, 4) for k, v in summary["metrics"].items()}})

    table = out / "summary.csv"
    with open(table, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {table}")
    for row in rows:
        print(row)


if __name__ == "__main__":
    main()
