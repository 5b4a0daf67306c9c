"""Acceptance suite: one test per release criterion, each printing a PASS line.

The end-to-end benchmark drives the installed CLI exactly as a user would
(synth -> train -> predict -> calibrate -> evaluate) on a fixed seed set and
must finish within its wall-clock budget.
"""

import csv
import itertools
import json
import math
import time

import numpy as np
import pytest

from conftest import run_cli
from contourqa.boc_net import NetworkConfig, TrainConfig, _predict_deterministic, fine_tune, new_model, train
from contourqa.calibration import (
    CalRecord,
    build_curve,
    find_threshold,
    selective_evaluate,
    spearman,
    uncertainty_agreement,
)
from contourqa.decision import ClinicianAssessment, adjudicate
from contourqa.errors import UnachievableTargetError
from contourqa.features import extract_features
from contourqa.geometry import (
    GeomMetrics,
    MaskSlice,
    SurrogateThresholds,
    dice,
    hd95,
    per_metric_classes,
    surface_dice,
    surrogate_label,
)
from contourqa.synthgen import generate_dataset, simulate_rater_panels
from contourqa.uq import McProbs, RaterPanel, manual_entropy, mc_moments, per_pass_moments, summarize
from oracles import (
    oracle_dice,
    oracle_hd95,
    oracle_mixture_moments,
    oracle_pass_moments,
    oracle_surface_dice,
)
from test_boc_net import MLP, TINY_CNN, finite_difference_worst_error

E2E_BUDGET_S = 600.0


def report(name: str):
    print(f"[acceptance] {name}: PASS")


class TestMomentOracle:
    def test_moment_oracle(self):
        start = time.time()
        rng = np.random.default_rng(2024)
        for _ in range(10_000):
            f1, f2 = rng.random(2)
            mean, var = per_pass_moments(f1, f2)
            omean, ovar = oracle_pass_moments(f1, f2)
            assert abs(mean - omean) < 1e-12 and abs(var - ovar) < 1e-12
        for _ in range(2_000):
            pairs = rng.random((int(rng.integers(1, 25)), 2))
            mean, var = mc_moments(McProbs(pairs))
            omean, ovar = oracle_mixture_moments(pairs.tolist())
            assert abs(mean - omean) < 1e-12 and abs(var - ovar) < 1e-12
        # worked examples
        assert per_pass_moments(1.0, 1.0) == (2.0, 0.0)
        mean, var = per_pass_moments(0.5, 0.0)
        assert (mean, var) == (0.5, 0.25)
        mean, var = per_pass_moments(0.8, 0.5)
        assert abs(mean - 1.2) < 1e-12 and abs(var - 0.56) < 1e-12
        elapsed = time.time() - start
        assert elapsed < 1.0, f"moment oracle took {elapsed:.2f}s"
        report("moment-oracle (1e4 random inputs, <1s)")


class TestEntropyValues:
    def test_entropy_values(self):
        for x in (0, 1, 2):
            assert manual_entropy(RaterPanel((x, x, x))) == 0.0
        for x, y in ((0, 1), (1, 2), (2, 0)):
            assert manual_entropy(RaterPanel((x, x, y))) == pytest.approx(0.636514, abs=1e-6)
        assert manual_entropy(RaterPanel((0, 1, 2))) == pytest.approx(1.098612, abs=1e-6)
        report("entropy-values")


class TestGeometryOracle:
    def test_geometry_oracle(self):
        rng = np.random.default_rng(77)
        checked_empty = 0
        for i in range(500):
            rows = int(rng.integers(1, 33))
            cols = int(rng.integers(1, 33))
            spacing = (float(rng.uniform(0.4, 2.5)), float(rng.uniform(0.4, 2.5)))
            density_a = rng.uniform(0, 0.9)
            density_b = rng.uniform(0, 0.9)
            if i % 25 == 0:
                density_a = 0.0  # exercise the empty-mask conventions
                checked_empty += 1
            if i % 50 == 0:
                density_b = 0.0
            a = MaskSlice(rng.random((rows, cols)) < density_a, spacing)
            b = MaskSlice(rng.random((rows, cols)) < density_b, spacing)
            tol = float(rng.uniform(0, 4))
            ap, bp = a.pixels.tolist(), b.pixels.tolist()
            assert dice(a, b) == oracle_dice(ap, bp)
            assert surface_dice(a, b, tol) == oracle_surface_dice(ap, bp, spacing, tol)
            assert hd95(a, b) == oracle_hd95(ap, bp, spacing)
        assert checked_empty >= 20
        report("geometry-oracle (500 pairs <=32x32, exact)")


class TestSurrogateSweep:
    def test_surrogate_label_sweep(self):
        thr = SurrogateThresholds()
        # values straddling every published boundary, one per intended class
        dsc_values = {2: [0.9, 0.95, 1.0], 1: [0.7, 0.8, 0.8999999], 0: [0.0, 0.5, 0.6999999]}
        hd_values = {2: [0.0, 1.0, 2.5], 1: [2.5000001, 4.0, 6.0], 0: [6.0000001, 50.0, math.inf]}
        for r_dsc, r_sdsc, r_hd in itertools.product((0, 1, 2), repeat=3):
            for dsc_v, sdsc_v, hd_v in zip(dsc_values[r_dsc], dsc_values[r_sdsc], hd_values[r_hd]):
                metrics = GeomMetrics(dsc=dsc_v, sdsc=sdsc_v, hd95_mm=hd_v)
                assert per_metric_classes(metrics, thr) == (r_dsc, r_sdsc, r_hd)
                assert surrogate_label(metrics, thr) == max(r_dsc, r_sdsc, r_hd)
        report("surrogate-label-sweep (27 combos, all boundaries)")


class TestGradientCheck:
    def test_gradient_check(self):
        start = time.time()
        configs = [(MLP, 0), (MLP, 1), (MLP, 3), (TINY_CNN, 1), (TINY_CNN, 3), (TINY_CNN, 4)]
        for netcfg, seed in configs:
            worst = finite_difference_worst_error(netcfg, seed)
            assert worst < 1e-4, f"{netcfg.backbone} seed {seed}: worst rel err {worst:.2e}"
        elapsed = time.time() - start
        assert elapsed < 30.0, f"gradient check took {elapsed:.1f}s"
        report(f"gradient-check ({len(configs)} nets, every coordinate, {elapsed:.1f}s)")


class TestCalibrationContract:
    def test_calibration_contract(self):
        rng = np.random.default_rng(5)
        for trial in range(50):
            n = int(rng.integers(1, 200))
            records = [
                CalRecord(f"r{i:04d}", float(rng.uniform(0, 1)), int(rng.integers(0, 3) == 0), 1)
                for i in range(n)
            ]
            target = float(rng.uniform(0.05, 1.0))
            try:
                result = find_threshold(build_curve(records), target)
            except UnachievableTargetError:
                continue
            rep = selective_evaluate(records, result.tau, target)
            assert rep.selective_accuracy >= target
        five = [
            CalRecord("a", 0.05, 1, 1),
            CalRecord("b", 0.10, 2, 2),
            CalRecord("c", 0.15, 0, 1),
            CalRecord("d", 0.20, 1, 1),
            CalRecord("e", 0.30, 2, 0),
        ]
        result = find_threshold(build_curve(five), 0.9)
        assert result.tau == 0.10
        assert result.coverage == pytest.approx(0.4)
        report("calibration-contract (threshold always meets target; fixture tau=0.10)")


@pytest.fixture(scope="session")
def e2e(tmp_path_factory):
    """The synthetic benchmark, driven through the CLI on fixed seeds."""
    work = tmp_path_factory.mktemp("e2e")
    t0 = time.time()
    steps = [
        ("synth", "--out", work / "train_data", "--n", "2000", "--seed", "7"),
        ("synth", "--out", work / "calib_data", "--n", "500", "--seed", "8"),
        ("synth", "--out", work / "test_data", "--n", "500", "--seed", "9"),
        (
            "train", "--data", work / "train_data", "--out", work / "model.ckpt",
            "--backbone", "small_cnn", "--epochs", "5", "--lr", "1e-3",
            "--milestones", "2", "--seed", "11",
        ),
        (
            "predict", "--data", work / "calib_data", "--checkpoint", work / "model.ckpt",
            "--out", work / "calib_preds.csv", "--t", "20", "--seed", "101",
        ),
        (
            "predict", "--data", work / "test_data", "--checkpoint", work / "model.ckpt",
            "--out", work / "test_preds.csv", "--t", "20", "--seed", "102",
        ),
        (
            "calibrate", "--predictions", work / "calib_preds.csv",
            "--labels-from", work / "calib_data", "--target", "0.90",
            "--out", work / "threshold.json", "--records-out", work / "calrecs.csv",
        ),
        (
            "evaluate", "--predictions", work / "test_preds.csv",
            "--labels-from", work / "test_data", "--threshold", work / "threshold.json",
            "--out", work / "report.json",
        ),
    ]
    for step in steps:
        proc = run_cli(*step)
        assert proc.returncode == 0, f"{step[0]} failed: {proc.stderr}"
    elapsed = time.time() - t0
    report_json = json.loads((work / "report.json").read_text())
    labels, metrics = {}, {}
    for sub in sorted((work / "test_data").iterdir()):
        lpath = sub / "labels.csv"
        if lpath.exists():
            for row in csv.DictReader(open(lpath)):
                labels[row["slice_id"]] = int(row["label"])
                metrics[row["slice_id"]] = GeomMetrics(
                    float(row["dsc"]), float(row["sdsc"]), float(row["hd95_mm"])
                )
    records, variances, ordered_metrics = [], [], []
    for row in csv.DictReader(open(work / "test_preds.csv")):
        sid = row["slice_id"]
        records.append(
            CalRecord(sid, float(row["variance"]), int(row["predicted_class"]), labels[sid])
        )
        variances.append(float(row["variance"]))
        ordered_metrics.append(metrics[sid])
    return {
        "work": work,
        "elapsed": elapsed,
        "report": report_json,
        "test_records": records,
        "test_variances": variances,
        "test_metrics": ordered_metrics,
    }


class TestEndToEndBenchmark:
    def test_e2e_runtime(self, e2e):
        assert e2e["elapsed"] <= E2E_BUDGET_S, f"pipeline took {e2e['elapsed']:.0f}s"
        report(f"e2e-benchmark runtime ({e2e['elapsed']:.0f}s <= {E2E_BUDGET_S:.0f}s)")

    def test_e2e_selective_accuracy(self, e2e):
        rep = e2e["report"]
        assert rep["selective_accuracy"] >= 0.85, rep
        report(f"e2e-benchmark (a) selective accuracy {rep['selective_accuracy']:.3f} >= 0.85")

    def test_e2e_selective_beats_overall(self, e2e):
        rep = e2e["report"]
        assert rep["selective_accuracy"] >= rep["overall_accuracy"], rep
        report(
            "e2e-benchmark (b) selective "
            f"{rep['selective_accuracy']:.3f} >= overall {rep['overall_accuracy']:.3f}"
        )

    def test_e2e_accuracy_uncertainty_trend(self, e2e):
        curve = build_curve(e2e["test_records"], n_bins=20)
        assert len(curve.bins) == 20
        rho = spearman(np.arange(20), [b.accuracy for b in curve.bins])
        assert rho <= -0.5, f"Spearman(bin index, bin accuracy) = {rho:.3f}"
        report(f"e2e-benchmark (c) accuracy-vs-uncertainty Spearman {rho:.3f} <= -0.5")

    def test_e2e_uncertainty_agreement(self, e2e):
        panels = simulate_rater_panels(e2e["test_metrics"], seed=55)
        agree = uncertainty_agreement(panels, e2e["test_variances"])
        assert agree >= 0.0
        report(f"e2e-benchmark (d) rater-entropy agreement {agree:.3f} >= 0")


class TestTransferVsScratch:
    def test_transfer_vs_scratch(self):
        mlp = NetworkConfig(backbone="mlp_features")
        manual = SurrogateThresholds(
            dsc_hi=0.87, dsc_lo=0.68, sdsc_hi=0.87, sdsc_lo=0.68,
            hd95_good_mm=3.2, hd95_major_mm=7.0,
        )

        def feats(samples):
            return np.stack([extract_features(s.ref_mask, s.auto_mask, s.metrics) for s in samples])

        pretrain = generate_dataset(1200, seed=31)
        xp, yp = feats(pretrain), np.array([s.label for s in pretrain])
        pre_params, _ = train(
            TrainConfig(epochs=40, learning_rate=3e-3, seed=1, lr_milestones=(24, 34)), mlp, (xp, yp)
        )
        # 30 subjects-worth of relabelled data (a more lenient simulated labeller)
        tune = generate_dataset(240, seed=32)
        held = generate_dataset(400, seed=33)
        xf = feats(tune)
        yf = np.array([surrogate_label(s.metrics, manual) for s in tune])
        xh = feats(held)
        yh = np.array([surrogate_label(s.metrics, manual) for s in held])
        wins = 0
        pairs = []
        for seed in (0, 1, 2):
            cfg = TrainConfig(epochs=20, learning_rate=1e-3, seed=seed, lr_milestones=(12, 17))
            groups = [("features", 1e-4), ("trunk", 3e-4), ("head", 1e-3)]
            tuned, _ = fine_tune(pre_params, groups, cfg, mlp, (xf, yf))
            acc_ft = float((_predict_deterministic(new_model(mlp, tuned), xh) == yh).mean())
            scratch, _ = train(cfg, mlp, (xf, yf))
            acc_sc = float((_predict_deterministic(new_model(mlp, scratch), xh) == yh).mean())
            pairs.append((acc_ft, acc_sc))
            wins += acc_ft >= acc_sc
        assert wins >= 2, f"fine-tune lost the majority: {pairs}"
        report(f"transfer-vs-scratch (fine-tune >= scratch in {wins}/3 seeds: {pairs})")


class TestDecisionTruthTable:
    def test_decision_truth_table(self):
        def prediction(cls, variance):
            pairs = {0: (0.05, 0.05), 1: (0.95, 0.05), 2: (0.95, 0.95)}[cls]
            pq = summarize(McProbs(np.array([pairs] * 4)))
            object.__setattr__(pq, "variance", variance)
            return pq

        tau = 0.33
        warned = set()
        for model_cls, clin_cls, abstain in itertools.product(range(3), range(3), (False, True)):
            pred = prediction(model_cls, 0.5 if abstain else 0.1)
            verdict = adjudicate(pred, tau, ClinicianAssessment("s/0000", "dr", clin_cls))
            if abstain:
                assert verdict.status == "abstain"
                assert not verdict.warning
                assert verdict.predicted_class is None
            else:
                assert verdict.status == "confident"
                if verdict.warning:
                    warned.add((model_cls, clin_cls))
        assert warned == {(0, 2), (1, 2)}
        report("decision-truth-table (warnings exactly at (0,2) and (1,2))")


class TestCliDeterminism:
    def test_cli_determinism(self, tmp_path):
        outputs = []
        for run in ("run1", "run2"):
            work = tmp_path / run
            work.mkdir()
            steps = [
                ("synth", "--out", work / "data", "--n", "120", "--seed", "17"),
                (
                    "train", "--data", work / "data", "--out", work / "model.ckpt",
                    "--epochs", "8", "--lr", "3e-3", "--milestones", "5", "--seed", "2",
                ),
                (
                    "predict", "--data", work / "data", "--checkpoint", work / "model.ckpt",
                    "--out", work / "preds.csv", "--probs-out", work / "probs.csv",
                    "--t", "10", "--seed", "6",
                ),
                (
                    "calibrate", "--predictions", work / "preds.csv",
                    "--labels-from", work / "data", "--target", "0.8",
                    "--out", work / "threshold.json", "--records-out", work / "calrecs.csv",
                ),
                (
                    "evaluate", "--predictions", work / "preds.csv",
                    "--labels-from", work / "data", "--threshold", work / "threshold.json",
                    "--out", work / "report.json",
                ),
            ]
            for step in steps:
                proc = run_cli(*step)
                assert proc.returncode == 0, f"{step[0]} failed: {proc.stderr}"
            digest = {}
            for path in sorted(p for p in work.rglob("*") if p.is_file()):
                digest[str(path.relative_to(work))] = path.read_bytes()
            outputs.append(digest)
        assert outputs[0].keys() == outputs[1].keys()
        for name in outputs[0]:
            assert outputs[0][name] == outputs[1][name], f"artifact differs: {name}"
        report(f"cli-determinism ({len(outputs[0])} artifacts byte-identical)")
