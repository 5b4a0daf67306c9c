"""Command-line pipeline: synth, metrics, surrogate-label, train, fine-tune,
predict, calibrate, evaluate, serve.

Verbs read and write the documented bundle/CSV/JSON formats, exit 0 on
success, and emit a machine-readable JSON error object on stderr otherwise.
A --config JSON file can carry defaults (surrogate thresholds, MC passes,
dropout rate, paths); explicit flags win. The serve address falls back to the
CONTOURQA_ADDR environment variable, then 127.0.0.1:8470.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bundleio
from .boc_net import (
    NetworkConfig,
    TrainConfig,
    fine_tune,
    load_checkpoint,
    mc_forward_batch,
    new_model,
    save_checkpoint,
    train,
)
from .calibration import CalRecord, build_curve, find_threshold, selective_evaluate
from .errors import ContourQAError
from .features import extract_features
from .geometry import GeomMetrics, SurrogateThresholds, compute_metrics, surrogate_label
from .synthgen import PerturbationParams, generate_dataset, label_histogram, simulate_rater_panels
from .uq import McProbs, summarize

DEFAULT_ADDR = "127.0.0.1:8470"


def _load_config(path) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def _fill_paths(args, config: dict):
    """Let config {"paths": {...}} supply any path argument left unset."""
    for key, value in config.get("paths", {}).items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        flags = ", ".join(f"--{n.replace('_', '-')}" for n in missing)
        raise ContourQAError(f"missing required arguments (flag or config paths): {flags}")


def _thresholds_from(config: dict, args) -> SurrogateThresholds:
    base = dict(config.get("thresholds", {}))
    for key in ("dsc_hi", "dsc_lo", "sdsc_hi", "sdsc_lo", "hd95_good_mm", "hd95_major_mm", "aggregation"):
        flag = getattr(args, key, None)
        if flag is not None:
            base[key] = flag
    return SurrogateThresholds(**base)


def _write_json(path, payload: dict):
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _emit(payload: dict):
    print(json.dumps(payload, sort_keys=True))


def cmd_synth(args, config):
    _require(args, "out")
    params = PerturbationParams(
        rotation_deg=args.rotation_deg,
        scale=(args.scale_lo, args.scale_hi),
        translation_mm=args.translation_mm,
        elastic_grid=args.elastic_grid,
        elastic_mag_mm=args.elastic_mag_mm,
    )
    thr = _thresholds_from(config, args)
    samples = generate_dataset(
        args.n,
        params=params,
        thresholds=thr,
        seed=args.seed,
        slices_per_subject=args.slices_per_subject,
        sdsc_tolerance_mm=args.sdsc_tolerance_mm,
    )
    subjects = bundleio.write_dataset(samples, args.out)
    if args.raters:
        panels = simulate_rater_panels(samples, seed=args.seed + 7919)
        rows_by_subject: dict[str, list] = {}
        for sample, panel in zip(samples, panels):
            sid = bundleio.slice_id(sample.ref_mask.subject_id, sample.ref_mask.slice_index)
            for r, label in enumerate(panel.labels):
                rows_by_subject.setdefault(sample.ref_mask.subject_id, []).append(
                    {"slice_id": sid, "rater_id": f"rater_{r}", "label": label}
                )
        for subject, rows in rows_by_subject.items():
            bundleio.write_raters(Path(args.out) / subject, rows)
    _emit({"written": str(args.out), "subjects": len(subjects), "histogram": label_histogram(samples)})


def _iter_slices(bundles):
    for b in bundles:
        for s in b.slices:
            yield s


def cmd_metrics(args, config):
    _require(args, "data", "out")
    bundles = bundleio.load_dataset(args.data)
    rows = []
    for s in _iter_slices(bundles):
        if s.ref is None:
            raise ContourQAError(f"{s.slice_id}: metrics need a reference mask")
        m = compute_metrics(s.ref, s.auto, args.sdsc_tolerance_mm)
        rows.append({"slice_id": s.slice_id, **m.as_row()})
    bundleio.write_csv(args.out, bundleio.METRIC_COLUMNS, rows)
    _emit({"written": str(args.out), "slices": len(rows)})


def cmd_surrogate_label(args, config):
    _require(args, "metrics", "out")
    thr = _thresholds_from(config, args)
    rows = []
    for r in bundleio.read_csv(args.metrics):
        m = GeomMetrics(
            dsc=float(r["dsc"]),
            sdsc=float(r["sdsc"]),
            hd95_mm=float(r["hd95_mm"]),
            degenerate=r.get("degenerate", "False") == "True",
        )
        rows.append(
            {
                "slice_id": r["slice_id"],
                "label": surrogate_label(m, thr),
                "dsc": m.dsc,
                "sdsc": m.sdsc,
                "hd95_mm": m.hd95_mm,
            }
        )
    bundleio.write_csv(args.out, bundleio.LABEL_COLUMNS, rows)
    _emit({"written": str(args.out), "slices": len(rows)})


def _dataset_arrays(bundles, backbone: str, sdsc_tolerance_mm: float):
    xs, ys, ids = [], [], []
    for s in _iter_slices(bundles):
        if s.label is None:
            raise ContourQAError(f"{s.slice_id}: training data needs labels.csv entries")
        if backbone == "small_cnn":
            img = s.image if s.image is not None else s.auto.pixels.astype(np.float64)
            xs.append(np.stack([img, s.auto.pixels.astype(np.float64)]))
        else:
            if s.ref is None:
                raise ContourQAError(f"{s.slice_id}: feature backbone needs reference masks")
            xs.append(extract_features(s.ref, s.auto, compute_metrics(s.ref, s.auto, sdsc_tolerance_mm)))
        ys.append(s.label)
        ids.append(s.slice_id)
    return np.stack(xs), np.array(ys, dtype=int), ids


def _split_validation(bundles, val_frac: float, seed: int):
    if val_frac <= 0:
        return bundles, None
    ids = sorted(b.subject_id for b in bundles)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 885])))
    perm = rng.permutation(len(ids))
    n_val = max(1, int(round(val_frac * len(ids))))
    val_ids = {ids[i] for i in perm[:n_val]}
    train_b = [b for b in bundles if b.subject_id not in val_ids]
    val_b = [b for b in bundles if b.subject_id in val_ids]
    return train_b, val_b


def _netcfg_from(args, config) -> NetworkConfig:
    return NetworkConfig(
        backbone=args.backbone,
        dropout_rate=args.dropout_rate
        if args.dropout_rate is not None
        else config.get("dropout_rate", 0.1),
        image_size=args.image_size,
    )


def _traincfg_from(args) -> TrainConfig:
    milestones = tuple(int(m) for m in args.milestones.split(",") if m) if args.milestones else ()
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        lr_milestones=milestones,
        weight_decay=args.weight_decay,
        seed=args.seed,
    )


def _trace_rows(trace):
    return [
        {"epoch": s.epoch, "lr": s.lr, "train_loss": s.train_loss, "val_accuracy": s.val_accuracy}
        for s in trace
    ]


def cmd_train(args, config):
    _require(args, "data", "out")
    bundles = bundleio.load_dataset(args.data)
    netcfg = _netcfg_from(args, config)
    train_b, val_b = _split_validation(bundles, args.val_frac, args.seed)
    x, y, _ = _dataset_arrays(train_b, netcfg.backbone, args.sdsc_tolerance_mm)
    validation = None
    if val_b:
        xv, yv, _ = _dataset_arrays(val_b, netcfg.backbone, args.sdsc_tolerance_mm)
        validation = (xv, yv)
    params, trace = train(_traincfg_from(args), netcfg, (x, y), validation)
    save_checkpoint(args.out, netcfg, params)
    if args.trace_out:
        _write_json(args.trace_out, {"epochs": _trace_rows(trace)})
    _emit({"written": str(args.out), "samples": int(x.shape[0]), "final_loss": trace[-1].train_loss if trace else None})


def cmd_fine_tune(args, config):
    _require(args, "data", "init", "out")
    netcfg, pretrained = load_checkpoint(args.init)
    bundles = bundleio.load_dataset(args.data)
    train_b, val_b = _split_validation(bundles, args.val_frac, args.seed)
    x, y, _ = _dataset_arrays(train_b, netcfg.backbone, args.sdsc_tolerance_mm)
    validation = None
    if val_b:
        xv, yv, _ = _dataset_arrays(val_b, netcfg.backbone, args.sdsc_tolerance_mm)
        validation = (xv, yv)
    lr_groups = [("features", args.lr_features), ("trunk", args.lr_trunk), ("head", args.lr_head)]
    params, trace = fine_tune(pretrained, lr_groups, _traincfg_from(args), netcfg, (x, y), validation)
    save_checkpoint(args.out, netcfg, params)
    if args.trace_out:
        _write_json(args.trace_out, {"epochs": _trace_rows(trace)})
    _emit({"written": str(args.out), "samples": int(x.shape[0])})


def cmd_predict(args, config):
    _require(args, "data", "checkpoint", "out")
    t_passes = args.t if args.t is not None else int(config.get("t", 20))
    netcfg, params = load_checkpoint(args.checkpoint)
    net = new_model(netcfg, params)
    bundles = bundleio.load_dataset(args.data)
    slices = list(_iter_slices(bundles))
    xs = []
    for s in slices:
        if netcfg.backbone == "small_cnn":
            img = s.image if s.image is not None else s.auto.pixels.astype(np.float64)
            xs.append(np.stack([img, s.auto.pixels.astype(np.float64)]))
        else:
            if s.ref is None:
                raise ContourQAError(f"{s.slice_id}: feature backbone needs reference masks")
            xs.append(extract_features(s.ref, s.auto))
    x = np.stack(xs)
    pred_rows, prob_rows = [], []
    chunk = 128
    for start in range(0, x.shape[0], chunk):
        probs = mc_forward_batch(net, x[start : start + chunk], t=t_passes, seed=(args.seed, start))
        for i in range(probs.shape[0]):
            sid = slices[start + i].slice_id
            pq = summarize(McProbs(probs[i]), args.rule)
            pred_rows.append(
                {
                    "slice_id": sid,
                    "mean": pq.mean,
                    "variance": pq.variance,
                    "p1_hat": pq.p1_hat,
                    "p2_hat": pq.p2_hat,
                    "P0": pq.class_probs[0],
                    "P1": pq.class_probs[1],
                    "P2": pq.class_probs[2],
                    "predicted_class": pq.predicted_class,
                }
            )
            for pass_idx in range(t_passes):
                prob_rows.append(
                    {
                        "slice_id": sid,
                        "pass": pass_idx,
                        "f1": float(probs[i, pass_idx, 0]),
                        "f2": float(probs[i, pass_idx, 1]),
                    }
                )
    bundleio.write_csv(args.out, bundleio.PREDICTION_COLUMNS, pred_rows)
    if args.probs_out:
        bundleio.write_csv(args.probs_out, bundleio.PROB_COLUMNS, prob_rows)
    _emit({"written": str(args.out), "slices": len(pred_rows), "passes": t_passes})


def _labels_lookup(source) -> dict[str, int]:
    path = Path(source)
    if path.is_dir():
        return bundleio.dataset_labels(bundleio.load_dataset(path))
    return {r["slice_id"]: int(r["label"]) for r in bundleio.read_csv(path)}


def _records_from_args(args) -> list[CalRecord]:
    if args.records:
        rows = bundleio.read_csv(args.records)
        return [
            CalRecord(
                slice_id=r["slice_id"],
                uncertainty=float(r["uncertainty"]),
                predicted_class=int(r["predicted_class"]),
                reference_class=int(r["reference_class"]),
            )
            for r in rows
        ]
    if not (args.predictions and args.labels_from):
        raise ContourQAError("provide either --records or --predictions with --labels-from")
    labels = _labels_lookup(args.labels_from)
    records = []
    for r in bundleio.read_csv(args.predictions):
        sid = r["slice_id"]
        if sid not in labels:
            raise ContourQAError(f"{sid}: no reference label found")
        records.append(
            CalRecord(
                slice_id=sid,
                uncertainty=float(r["variance"]),
                predicted_class=int(r["predicted_class"]),
                reference_class=labels[sid],
                class_probs=(float(r["P0"]), float(r["P1"]), float(r["P2"])),
            )
        )
    return records


def cmd_calibrate(args, config):
    _require(args, "out")
    records = _records_from_args(args)
    curve = build_curve(records)
    result = find_threshold(curve, args.target)
    _write_json(args.out, result.to_json())
    if args.records_out:
        bundleio.write_csv(
            args.records_out,
            bundleio.RECORD_COLUMNS,
            [
                {
                    "slice_id": r.slice_id,
                    "uncertainty": r.uncertainty,
                    "predicted_class": r.predicted_class,
                    "reference_class": r.reference_class,
                }
                for r in records
            ],
        )
    _emit({"written": str(args.out), **result.to_json()})


def cmd_evaluate(args, config):
    _require(args, "out")
    records = _records_from_args(args)
    if args.tau is not None:
        tau = args.tau
        target = args.target
    else:
        threshold = json.loads(Path(args.threshold).read_text())
        tau = float(threshold["tau"])
        target = float(threshold["target_accuracy"])
    report = selective_evaluate(records, tau, target)
    _write_json(args.out, report.to_json())
    _emit(
        {
            "written": str(args.out),
            "coverage": report.coverage,
            "selective_accuracy": report.selective_accuracy,
            "overall_accuracy": report.overall_accuracy,
        }
    )


def cmd_serve(args, config):
    _require(args, "data", "checkpoint", "calibration")
    import uvicorn

    from .server import build_state, create_app

    state = build_state(
        bundle_root=args.data,
        checkpoint_path=args.checkpoint,
        calibration_records_path=args.calibration,
        event_log_path=args.events,
        target_accuracy=args.target,
        t_passes=args.t if args.t is not None else int(config.get("t", 20)),
        seed=args.seed,
        rule=args.rule,
    )
    app = create_app(state, frontend_dir=args.frontend)
    addr = args.addr or os.environ.get("CONTOURQA_ADDR", DEFAULT_ADDR)
    host, _, port = addr.partition(":")
    uvicorn.run(app, host=host, port=int(port or 8470), log_level="warning")


def _add_threshold_flags(p):
    p.add_argument("--dsc-hi", dest="dsc_hi", type=float)
    p.add_argument("--dsc-lo", dest="dsc_lo", type=float)
    p.add_argument("--sdsc-hi", dest="sdsc_hi", type=float)
    p.add_argument("--sdsc-lo", dest="sdsc_lo", type=float)
    p.add_argument("--hd95-good-mm", dest="hd95_good_mm", type=float)
    p.add_argument("--hd95-major-mm", dest="hd95_major_mm", type=float)
    p.add_argument("--aggregation", choices=("max_rule", "min_rule"))


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--milestones", default="")
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-frac", type=float, default=0.0)
    p.add_argument("--sdsc-tolerance-mm", type=float, default=2.0)
    p.add_argument("--trace-out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contourqa", description=__doc__)
    parser.add_argument("--config", help="JSON file with defaults (thresholds, t, dropout_rate)")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    p.add_argument("--out")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--slices-per-subject", type=int, default=8)
    p.add_argument("--rotation-deg", type=float, default=20.0)
    p.add_argument("--scale-lo", type=float, default=0.7)
    p.add_argument("--scale-hi", type=float, default=1.35)
    p.add_argument("--translation-mm", type=float, default=9.0)
    p.add_argument("--elastic-grid", type=int, default=4)
    p.add_argument("--elastic-mag-mm", type=float, default=14.0)
    p.add_argument("--sdsc-tolerance-mm", type=float, default=2.0)
    p.add_argument("--raters", action="store_true", help="also write simulated 3-rater panels")
    _add_threshold_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="compute DSC/SDSC/HD95 per slice")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--sdsc-tolerance-mm", type=float, default=2.0)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("surrogate-label", help="derive quality classes from a metrics CSV")
    p.add_argument("--metrics")
    p.add_argument("--out")
    _add_threshold_flags(p)
    p.set_defaults(func=cmd_surrogate_label)

    p = sub.add_parser("train", help="train the ordinal quality network")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--backbone", choices=("mlp_features", "small_cnn"), default="mlp_features")
    p.add_argument("--dropout-rate", type=float)
    p.add_argument("--image-size", type=int, default=64)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fine-tune", help="continue training with per-group learning rates")
    p.add_argument("--data")
    p.add_argument("--init")
    p.add_argument("--out")
    p.add_argument("--lr-features", type=float, default=1e-5)
    p.add_argument("--lr-trunk", type=float, default=1e-4)
    p.add_argument("--lr-head", type=float, default=1e-3)
    _add_train_flags(p)
    p.set_defaults(func=cmd_fine_tune)

    p = sub.add_parser("predict", help="MC-dropout predictions for a dataset")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--probs-out")
    p.add_argument("--t", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rule", choices=("conditional", "cumulative"), default="conditional")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("calibrate", help="select the uncertainty threshold for a target accuracy")
    p.add_argument("--records")
    p.add_argument("--predictions")
    p.add_argument("--labels-from")
    p.add_argument("--target", type=float, default=0.9)
    p.add_argument("--out")
    p.add_argument("--records-out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="selective evaluation report at a threshold")
    p.add_argument("--records")
    p.add_argument("--predictions")
    p.add_argument("--labels-from")
    p.add_argument("--tau", type=float)
    p.add_argument("--threshold", help="threshold JSON from the calibrate verb")
    p.add_argument("--target", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP review service")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--calibration", help="calibration records CSV")
    p.add_argument("--events", default="events.jsonl")
    p.add_argument("--target", type=float, default=0.9)
    p.add_argument("--t", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rule", choices=("conditional", "cumulative"), default="conditional")
    p.add_argument("--frontend", help="static UI directory to mount at /")
    p.add_argument("--addr", help="host:port, else $CONTOURQA_ADDR")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = _load_config(args.config)
    try:
        _fill_paths(args, config)
        args.func(args, config)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not crashes
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
