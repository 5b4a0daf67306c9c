#!/usr/bin/env python3
"""Synthetic end-to-end benchmark: generate cohorts, train, calibrate, evaluate.

Drives the CLI verbs with fixed seeds and prints the selective-prediction
summary plus the accuracy-vs-uncertainty trend and the rater-agreement
statistic. Everything lands under --workdir for inspection.
"""

import argparse
import csv
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from contourqa.calibration import CalRecord, build_curve, spearman, uncertainty_agreement
from contourqa.geometry import GeomMetrics
from contourqa.synthgen import simulate_rater_panels


def cli(*args):
    cmd = [sys.executable, "-m", "contourqa.cli", *[str(a) for a in args]]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"{args[0]} failed: {proc.stderr}")
    return proc.stdout


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="benchmark_out")
    parser.add_argument("--n-train", type=int, default=2000)
    parser.add_argument("--n-calib", type=int, default=500)
    parser.add_argument("--n-test", type=int, default=500)
    parser.add_argument("--backbone", default="small_cnn", choices=("small_cnn", "mlp_features"))
    parser.add_argument("--epochs", type=int, default=5)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--milestones", default="2")
    parser.add_argument("--target", type=float, default=0.90)
    parser.add_argument("--t", type=int, default=20)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    print(cli("synth", "--out", work / "train_data", "--n", args.n_train, "--seed", args.seed).strip())
    print(cli("synth", "--out", work / "calib_data", "--n", args.n_calib, "--seed", args.seed + 1).strip())
    print(cli("synth", "--out", work / "test_data", "--n", args.n_test, "--seed", args.seed + 2).strip())
    print(
        cli(
            "train", "--data", work / "train_data", "--out", work / "model.ckpt",
            "--backbone", args.backbone, "--epochs", args.epochs, "--lr", args.lr,
            "--milestones", args.milestones, "--seed", 11,
            "--trace-out", work / "trace.json",
        ).strip()
    )
    cli(
        "predict", "--data", work / "calib_data", "--checkpoint", work / "model.ckpt",
        "--out", work / "calib_preds.csv", "--t", args.t, "--seed", 101,
    )
    cli(
        "predict", "--data", work / "test_data", "--checkpoint", work / "model.ckpt",
        "--out", work / "test_preds.csv", "--probs-out", work / "test_probs.csv",
        "--t", args.t, "--seed", 102,
    )
    print(
        cli(
            "calibrate", "--predictions", work / "calib_preds.csv",
            "--labels-from", work / "calib_data", "--target", args.target,
            "--out", work / "threshold.json", "--records-out", work / "calrecs.csv",
        ).strip()
    )
    cli(
        "evaluate", "--predictions", work / "test_preds.csv", "--labels-from", work / "test_data",
        "--threshold", work / "threshold.json", "--out", work / "report.json",
    )
    report = json.loads((work / "report.json").read_text())

    labels, metrics = {}, {}
    for sub in sorted((work / "test_data").iterdir()):
        lpath = sub / "labels.csv"
        if lpath.exists():
            with open(lpath) as fh:
                for row in csv.DictReader(fh):
                    labels[row["slice_id"]] = int(row["label"])
                    metrics[row["slice_id"]] = GeomMetrics(
                        float(row["dsc"]), float(row["sdsc"]), float(row["hd95_mm"])
                    )
    records, variances, ordered = [], [], []
    with open(work / "test_preds.csv") as fh:
        for row in csv.DictReader(fh):
            sid = row["slice_id"]
            records.append(CalRecord(sid, float(row["variance"]), int(row["predicted_class"]), labels[sid]))
            variances.append(float(row["variance"]))
            ordered.append(metrics[sid])
    rho = spearman(np.arange(20), [b.accuracy for b in build_curve(records, n_bins=20).bins])
    agree = uncertainty_agreement(simulate_rater_panels(ordered, seed=55), variances)

    print(f"\n== benchmark summary ({time.time() - t0:.0f}s) ==")
    print(f"target accuracy        {report['target_accuracy']:.2f}")
    print(f"tau                    {report['tau']:.4f}")
    print(f"test coverage          {report['coverage']:.3f}")
    print(f"selective accuracy     {report['selective_accuracy']:.3f}")
    print(f"overall accuracy       {report['overall_accuracy']:.3f}")
    print(f"accuracy-vs-uncertainty Spearman (20 bins): {rho:.3f}")
    print(f"rater-entropy agreement: {agree:.3f}")
    print(f"report: {work / 'report.json'}")


if __name__ == "__main__":
    main()
